"""Command-line interface: ``acurank {rerank,simulate,evaluate,compare}``.

Exit codes:

* 0 success
* 2 configuration error (bad flags, bad config file)
* 3 data error (unreadable or malformed inputs)
* 4 fatal backend error; results for queries finished before it are kept
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from collections import defaultdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .backends import HttpReranker, NoisyReranker, OracleReranker
from .config import BackendConfig, load_config
from .data import (
    SyntheticSpec,
    build_tasks,
    generate_synthetic,
    load_corpus,
    load_qrels,
    load_queries,
    load_run,
    ranking_to_run,
    read_traces,
    write_traces,
)
from .exceptions import ConfigurationError, DataError, EvaluationError, TransportError
from .metrics import macro_average, ndcg_at_k, report_round
from .methods import parse_method, run_queries
from .simulation import retrieval_wig, rows_to_csv, simulate_method, summarize

logger = logging.getLogger("acurank")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_BACKEND = 4


def _add_method_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("method")
    group.add_argument("--variant", choices=["default", "h", "hh"], help="AcuRank preset")
    group.add_argument("--max-calls", type=int, help="AcuRank call budget per query")
    group.add_argument("--epsilon", type=float, help="uncertainty tolerance")
    group.add_argument("--tau", type=int, help="stop once fewer uncertain documents remain")
    group.add_argument("--window", type=int, help="sliding-window size")
    group.add_argument("--stride", type=int, help="sliding-window stride")
    group.add_argument("--passes", type=int, help="sliding-window passes")
    group.add_argument("--tournaments", type=int, help="TourRank tournaments")
    group.add_argument("--plan", help="TrueSkill-Static stage plan, e.g. 5-2-2-1")


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML/JSON config file")
    parser.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    parser.add_argument("--jobs", type=int, default=1, help="queries processed in parallel")
    parser.add_argument("--human", action="store_true", help="pretty-print tables instead of CSV")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="acurank", description="Uncertainty-aware adaptive listwise reranking.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    rerank = sub.add_parser("rerank", help="rerank a first-stage TREC run")
    rerank.add_argument("--run", required=True, help="first-stage run (TREC format)")
    rerank.add_argument("--corpus", required=True, help="corpus JSON lines")
    rerank.add_argument("--queries", required=True, help="queries (.tsv or .jsonl)")
    rerank.add_argument("--qrels", help="judgments; enables NDCG reporting and simulated backends")
    rerank.add_argument("--method", default="acurank", help="method label, e.g. acurank, acurank-9, sw-2")
    rerank.add_argument("--backend", choices=["oracle", "noisy", "http"], help="reranker backend")
    rerank.add_argument("--endpoint", help="chat-completions URL for the http backend")
    rerank.add_argument("--model", help="model name for the http backend")
    rerank.add_argument("--temperature", type=float, help="noise temperature for the noisy backend")
    rerank.add_argument("--top-n", type=int, default=100, help="candidates reranked per query (default 100)")
    rerank.add_argument("--dataset", help="dataset name used in reports (default: run file stem)")
    rerank.add_argument("--out", required=True, help="output run path; traces go to <out>.traces.jsonl")
    _add_method_flags(rerank)
    _add_common_flags(rerank)

    simulate = sub.add_parser("simulate", help="compare methods on seeded synthetic data")
    simulate.add_argument(
        "--methods", default="acurank,acurank-9,sw-1,sw-2", help="comma separated method labels"
    )
    simulate.add_argument("--budgets", help="comma separated AcuRank call budgets, each adds a row")
    simulate.add_argument("--backend", choices=["oracle", "noisy"], default="noisy")
    simulate.add_argument("--n-queries", type=int, help="synthetic queries")
    simulate.add_argument("--n-docs", type=int, help="candidates per query")
    simulate.add_argument("--score-noise", type=float, help="retrieval score noise std")
    simulate.add_argument("--temperature-range", nargs=2, type=float, metavar=("LO", "HI"))
    simulate.add_argument("--out", help="CSV path (default: stdout)")
    simulate.add_argument("--traces", help="also write per-query traces (JSON lines)")
    _add_method_flags(simulate)
    _add_common_flags(simulate)

    evaluate = sub.add_parser("evaluate", help="NDCG@k of a TREC run")
    evaluate.add_argument("--run", required=True)
    evaluate.add_argument("--qrels", required=True)
    evaluate.add_argument("--k", type=int, default=10)
    evaluate.add_argument("--human", action="store_true")

    compare = sub.add_parser("compare", help="method x dataset table from trace files")
    compare.add_argument("traces", nargs="+", help="trace JSON-lines files")
    compare.add_argument("--out", help="CSV path (default: stdout)")
    compare.add_argument("--human", action="store_true")
    return parser


def _method_overrides(args) -> dict:
    scheduler = {}
    for flag in ("max_calls", "epsilon", "tau"):
        value = getattr(args, flag, None)
        if value is not None:
            scheduler[flag] = value
    window = {f: getattr(args, f) for f in ("window", "stride", "passes") if getattr(args, f, None) is not None}
    tourrank = {"tournaments": args.tournaments} if getattr(args, "tournaments", None) is not None else {}
    return {"scheduler": scheduler, "window": window, "tourrank": tourrank, "plan": getattr(args, "plan", None)}


def _resolve_method(label: str, args, config):
    overrides = _method_overrides(args)
    scheduler = {**config.scheduler, **overrides["scheduler"]}
    return parse_method(
        label,
        scheduler=scheduler,
        variant=args.variant,
        window=overrides["window"],
        tourrank=overrides["tourrank"],
        plan=overrides["plan"],
        seed=args.seed,
    )


def _format_table(header: Sequence[str], rows: Sequence[Sequence], human: bool) -> str:
    if not human:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        return buffer.getvalue()
    cells = [list(map(str, header))] + [[str(c) for c in row] for row in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _make_backend_factory(args, config, qrels):
    settings = dict(config.backend)
    for flag, key in (("backend", "kind"), ("endpoint", "endpoint"), ("model", "model"), ("temperature", "temperature")):
        value = getattr(args, flag, None)
        if value is not None:
            settings[key] = value
    backend_cfg = BackendConfig.from_mapping(settings)
    if backend_cfg.kind in ("oracle", "noisy") and qrels is None:
        raise ConfigurationError(f"the {backend_cfg.kind} backend needs --qrels for hidden relevance")
    if backend_cfg.kind == "oracle":
        oracle = OracleReranker()
        return lambda query_id: oracle
    if backend_cfg.kind == "noisy":
        return lambda query_id: NoisyReranker(backend_cfg.temperature, seed=args.seed)
    http = HttpReranker(
        endpoint=backend_cfg.endpoint,
        model=backend_cfg.model,
        timeout=backend_cfg.timeout,
        api_key_env=backend_cfg.api_key_env,
        max_concurrency=backend_cfg.max_concurrency,
        retries=backend_cfg.retries,
    )
    return lambda query_id: http


def cmd_rerank(args) -> int:
    config = load_config(args.config)
    method = _resolve_method(args.method, args, config)
    run = load_run(args.run)
    queries = load_queries(args.queries)
    needed = {doc_id for rows in run.values() for doc_id, _ in rows[: args.top_n]}
    corpus = load_corpus(args.corpus, only=needed)
    qrels = load_qrels(args.qrels) if args.qrels else None
    truncated = {qid: rows[: args.top_n] for qid, rows in run.items()}
    tasks = build_tasks(truncated, corpus, queries, qrels)
    backend_for = _make_backend_factory(args, config, qrels)
    dataset = args.dataset or Path(args.run).stem

    out_path = Path(args.out)
    trace_path = out_path.with_name(out_path.name + ".traces.jsonl")
    scores = []
    with open(out_path, "w", encoding="utf-8") as run_file, open(trace_path, "w", encoding="utf-8") as trace_file:

        def on_done(task, ranking, trace):
            trace.dataset = dataset
            trace.wig = retrieval_wig(task)
            if qrels is not None and task.query_id in qrels:
                trace.ndcg = ndcg_at_k(ranking, qrels, task.query_id, k=10)
                scores.append(trace.ndcg)
            for rank, (doc_id, score) in enumerate(ranking_to_run(ranking), start=1):
                run_file.write(f"{task.query_id} Q0 {doc_id} {rank} {score!r} {method.label}\n")
            trace_file.write(trace.to_json() + "\n")
            # flush per query so a later fatal error leaves usable partial output
            run_file.flush()
            trace_file.flush()

        outcome = run_queries(method, tasks, backend_for, jobs=args.jobs, on_done=on_done)

    calls = [t.calls_made for t in outcome.traces]
    if outcome.traces:
        header = ["dataset", "method", "ndcg@10", "avg_calls", "queries"]
        ndcg = report_round(100 * float(np.mean(scores))) if scores else ""
        row = [dataset, method.label, ndcg, report_round(float(np.mean(calls))), len(outcome.traces)]
        sys.stdout.write(_format_table(header, [row], args.human))
    if outcome.fatal is not None:
        logger.error("backend failed: %s (%d of %d queries written)", outcome.fatal, len(outcome.traces), len(tasks))
        return EXIT_BACKEND
    return EXIT_OK


def _synthetic_spec(args, config) -> SyntheticSpec:
    values = dict(config.synthetic)
    # all randomness flows from --seed; a seed in the config file is ignored
    values["seed"] = args.seed
    for flag, key in (("n_queries", "n_queries"), ("n_docs", "n_docs_per_query"), ("score_noise", "score_noise")):
        value = getattr(args, flag)
        if value is not None:
            values[key] = value
    if args.temperature_range is not None:
        values["temperature_range"] = tuple(args.temperature_range)
    return SyntheticSpec.from_mapping(values)


def cmd_simulate(args) -> int:
    config = load_config(args.config)
    spec = _synthetic_spec(args, config)
    labels = [label.strip() for label in args.methods.split(",") if label.strip()]
    if args.budgets:
        try:
            labels += [f"acurank-{int(b)}" for b in args.budgets.split(",") if b.strip()]
        except ValueError:
            raise ConfigurationError(f"--budgets must be integers, got {args.budgets!r}") from None
    methods = [_resolve_method(label, args, config) for label in labels]
    dataset = generate_synthetic(spec)
    tasks = dataset.tasks()
    rows, traces = [], []
    for method in methods:
        results = simulate_method(method, dataset, backend=args.backend, seed=spec.seed, jobs=args.jobs, tasks=tasks)
        rows.append(summarize(method, results))
        traces.extend(r.trace for r in results)
    if args.human:
        header = ["method", "budget", "ndcg@10", "calls", "rho(temp,calls)", "p"]
        table = [
            [r.method, "" if r.budget is None else r.budget, f"{r.mean_ndcg:.4f}", f"{r.mean_calls:.2f}",
             f"{r.spearman_rho:.3f}", f"{r.spearman_p:.2g}"]
            for r in rows
        ]
        _emit(_format_table(header, table, True), args.out)
    else:
        _emit(rows_to_csv(rows), args.out)
    if args.traces:
        write_traces(args.traces, traces)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    run = load_run(args.run)
    qrels = load_qrels(args.qrels)
    rows = []
    values = []
    for qid in sorted(run):
        if qid not in qrels:
            logger.warning("query %s has no judgments; skipped", qid)
            continue
        value = ndcg_at_k([doc_id for doc_id, _ in run[qid]], qrels, qid, k=args.k)
        values.append(value)
        rows.append([qid, f"{value:.4f}" if args.human else repr(value)])
    if not values:
        raise EvaluationError("no judged queries in the run")
    mean = float(np.mean(values))
    rows.append(["mean", f"{mean:.4f}" if args.human else repr(mean)])
    sys.stdout.write(_format_table(["query_id", f"ndcg@{args.k}"], rows, args.human))
    return EXIT_OK


def cmd_compare(args) -> int:
    per_cell = defaultdict(list)
    calls = defaultdict(list)
    datasets = []
    methods = []
    for path in args.traces:
        for trace in read_traces(path):
            dataset = trace.dataset or Path(path).stem
            if dataset not in datasets:
                datasets.append(dataset)
            if trace.strategy not in methods:
                methods.append(trace.strategy)
            if trace.ndcg is not None:
                per_cell[trace.strategy, dataset].append(trace.ndcg)
            calls[trace.strategy].append(trace.calls_made)
    if not methods:
        raise DataError("no traces found")
    header = ["method", *datasets, "avg", "avg_calls"]
    rows = []
    for method in methods:
        means = {d: 100 * float(np.mean(per_cell[method, d])) for d in datasets if per_cell[method, d]}
        row = [method] + [report_round(means[d]) if d in means else "" for d in datasets]
        row.append(report_round(macro_average(means)) if means else "")
        row.append(report_round(float(np.mean(calls[method]))))
        rows.append(row)
    _emit(_format_table(header, rows, args.human), args.out)
    return EXIT_OK


COMMANDS = {"rerank": cmd_rerank, "simulate": cmd_simulate, "evaluate": cmd_evaluate, "compare": cmd_compare}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    try:
        return COMMANDS[args.command](args)
    except ConfigurationError as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (DataError, EvaluationError) as exc:
        logger.error("data error: %s", exc)
        return EXIT_DATA
    except OSError as exc:
        logger.error("cannot access %s: %s", exc.filename or "file", exc.strerror)
        return EXIT_DATA
    except TransportError as exc:
        logger.error("backend error: %s", exc)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
