"""Named reranking methods and a driver that runs them over many queries.

Method names follow the labels used in result tables:

==================  ==========================================
``acurank``         adaptive engine, default configuration
``acurank-9``       adaptive engine capped at 9 calls
``acurank-h``       adaptive engine, variant ``h`` (``-hh`` too)
``sw-2``            sliding windows, 2 passes
``tourrank-1``      TourRank with 1 tournament
``ts-5-2-2-1``      TrueSkill-Static with stage plan 5-2-2-1
==================  ==========================================

The long names ``sliding-window``, ``tourrank`` and ``trueskill-static``
take their parameters from overrides instead.
"""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional, Sequence

from .baselines import (
    SlidingWindowConfig,
    StaticStagePlan,
    TourRankConfig,
    run_sliding_window,
    run_tourrank,
    run_trueskill_static,
)
from .engine import VARIANTS, QueryTask, RunTrace, SchedulerConfig, run_acurank
from .exceptions import ConfigurationError, TransportError

__all__ = ["MethodSpec", "parse_method", "run_queries", "BatchOutcome"]

logger = logging.getLogger(__name__)

_FAMILIES = {
    "acurank": "acurank",
    "sw": "sliding-window",
    "sliding-window": "sliding-window",
    "tourrank": "tourrank",
    "ts": "trueskill-static",
    "trueskill-static": "trueskill-static",
}


@dataclass(frozen=True)
class MethodSpec:
    """A fully resolved method with its configuration."""

    family: str
    label: str
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    window: SlidingWindowConfig = field(default_factory=SlidingWindowConfig)
    tourrank: TourRankConfig = field(default_factory=TourRankConfig)
    plan: StaticStagePlan = field(default_factory=StaticStagePlan)

    @property
    def budget(self) -> Optional[int]:
        """The nominal call budget, when the method has one."""
        return self.scheduler.max_calls if self.family == "acurank" else None

    def run(self, task: QueryTask, backend, max_workers: int = 1) -> tuple[list[str], RunTrace]:
        if self.family == "acurank":
            return run_acurank(task, self.scheduler, backend, max_workers=max_workers, strategy=self.label)
        if self.family == "sliding-window":
            return run_sliding_window(task, self.window, backend, strategy=self.label)
        if self.family == "tourrank":
            return run_tourrank(task, self.tourrank, backend, strategy=self.label)
        return run_trueskill_static(task, self.plan, self.scheduler, backend, strategy=self.label)


def parse_method(
    name: str,
    scheduler: Optional[Mapping] = None,
    variant: Optional[str] = None,
    window: Optional[Mapping] = None,
    tourrank: Optional[Mapping] = None,
    plan: Optional[str] = None,
    seed: int = 0,
) -> MethodSpec:
    """Resolve a method label plus explicit overrides into a :class:`MethodSpec`.

    Values embedded in the label (``acurank-9``, ``sw-3``) are applied
    first; explicit overrides win over them.

    Raises:
        ConfigurationError: unknown family or malformed suffix.
    """
    name = name.strip().lower()
    family_key, suffix = _split_label(name)
    try:
        family = _FAMILIES[family_key]
    except KeyError:
        raise ConfigurationError(f"unknown method {name!r}; expected one of {sorted(set(_FAMILIES.values()))}") from None
    sched_values = dict(scheduler or {})
    sched_values.setdefault("seed", seed)
    window_values = dict(window or {})
    tour_values = dict(tourrank or {})
    tour_values.setdefault("seed", seed)
    plan_text = plan
    label = name

    if family == "acurank":
        if suffix in VARIANTS:
            variant = variant or suffix
        elif suffix.isdigit():
            sched_values.setdefault("max_calls", int(suffix))
        elif suffix:
            raise ConfigurationError(f"acurank suffix must be a call budget or variant, got {suffix!r}")
    elif suffix:
        if not re.fullmatch(r"\d+(-\d+)*", suffix):
            raise ConfigurationError(f"malformed method suffix {suffix!r} in {name!r}")
        if family == "sliding-window":
            window_values.setdefault("passes", int(suffix))
        elif family == "tourrank":
            tour_values.setdefault("tournaments", int(suffix))
        else:
            plan_text = plan_text or suffix

    cfg = SchedulerConfig.from_mapping(sched_values)
    if variant:
        cfg = _apply_variant(cfg, variant, explicit=sched_values)
    spec = MethodSpec(
        family=family,
        label=label,
        scheduler=cfg,
        window=SlidingWindowConfig(**window_values),
        tourrank=TourRankConfig(**tour_values),
        plan=StaticStagePlan.parse(plan_text) if plan_text else StaticStagePlan(),
    )
    return replace(spec, label=_canonical_label(spec, variant))


def _split_label(name: str) -> tuple[str, str]:
    for key in sorted(_FAMILIES, key=len, reverse=True):
        if name == key:
            return key, ""
        if name.startswith(key + "-"):
            return key, name[len(key) + 1:]
    return name, ""


def _apply_variant(cfg: SchedulerConfig, variant: str, explicit: Mapping) -> SchedulerConfig:
    variant = variant.lower()
    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown variant {variant!r}; expected one of {sorted(VARIANTS)}")
    updated = cfg.with_variant(variant)
    # flags given explicitly (e.g. --epsilon) take precedence over the variant
    keep = {k: getattr(cfg, k) for k in VARIANTS[variant] if k in explicit}
    return replace(updated, **keep) if keep else updated


def _canonical_label(spec: MethodSpec, variant: Optional[str]) -> str:
    if spec.family == "acurank":
        if spec.scheduler.max_calls is not None:
            return f"acurank-{spec.scheduler.max_calls}"
        if variant and variant.lower() != "default":
            return f"acurank-{variant.lower()}"
        return "acurank"
    if spec.family == "sliding-window":
        return f"sw-{spec.window.passes}"
    if spec.family == "tourrank":
        return f"tourrank-{spec.tourrank.tournaments}"
    return "ts-" + "-".join(map(str, spec.plan.c))


@dataclass
class BatchOutcome:
    """Results of running one method over a list of queries."""

    rankings: dict = field(default_factory=dict)
    traces: list = field(default_factory=list)
    fatal: Optional[BaseException] = None


def run_queries(
    method: MethodSpec,
    tasks: Sequence[QueryTask],
    backend_for: Callable[[str], object],
    jobs: int = 1,
    on_done: Optional[Callable[[QueryTask, list, RunTrace], None]] = None,
) -> BatchOutcome:
    """Run ``method`` on every task, in parallel across queries when ``jobs > 1``.

    Results are reported (and ``on_done`` is invoked) in task order no matter
    which query finishes first.  A fatal backend error stops the run; queries
    that already completed before it in task order are still reported.
    """
    outcome = BatchOutcome()

    def one(task):
        return method.run(task, backend_for(task.query_id))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(one, task) for task in tasks]
            pairs = list(zip(tasks, futures))
            for task, future in pairs:
                if outcome.fatal is not None:
                    future.cancel()
                    continue
                try:
                    ranking, trace = future.result()
                except TransportError as exc:
                    outcome.fatal = exc
                    continue
                _record(outcome, task, ranking, trace, on_done)
    else:
        for task in tasks:
            try:
                ranking, trace = one(task)
            except TransportError as exc:
                outcome.fatal = exc
                break
            _record(outcome, task, ranking, trace, on_done)
    if outcome.fatal is not None:
        logger.error("fatal backend error after %d queries: %s", len(outcome.traces), outcome.fatal)
    return outcome


def _record(outcome, task, ranking, trace, on_done):
    outcome.rankings[task.query_id] = ranking
    outcome.traces.append(trace)
    if on_done is not None:
        on_done(task, ranking, trace)
