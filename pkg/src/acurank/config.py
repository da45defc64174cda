"""Structured run configuration files.

A config file is YAML (or JSON, which YAML also accepts) with up to three
top-level sections, all optional::

    scheduler:          # keys of SchedulerConfig
      epsilon: 0.01
      tau: 10
      max_calls: 18
    backend:            # how to reach the reranker
      kind: http        # oracle | noisy | http
      endpoint: http://localhost:8000/v1/chat/completions
      model: castorini/rank_zephyr_7b_v1_full
      api_key_env: RERANK_API_KEY
      max_concurrency: 4
      timeout: 60
      retries: 2
      temperature: 1.0  # noisy backend only
    synthetic:          # keys of SyntheticSpec, for ``simulate``
      n_queries: 200

Unknown keys anywhere are rejected so that typos fail loudly.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping, Optional

import yaml

from .exceptions import ConfigurationError

__all__ = ["BackendConfig", "RunConfig", "load_config"]

_SECTIONS = {"scheduler", "backend", "synthetic"}


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "oracle"
    endpoint: Optional[str] = None
    model: Optional[str] = None
    api_key_env: Optional[str] = None
    max_concurrency: int = 4
    timeout: float = 60.0
    retries: int = 2
    temperature: float = 1.0

    def __post_init__(self):
        if self.kind not in ("oracle", "noisy", "http"):
            raise ConfigurationError(f"backend kind must be oracle, noisy or http, got {self.kind!r}")
        if self.kind == "http" and not (self.endpoint and self.model):
            raise ConfigurationError("the http backend needs both endpoint and model")
        if self.timeout <= 0 or self.retries < 0 or self.max_concurrency < 1:
            raise ConfigurationError("timeout must be > 0, retries >= 0 and max_concurrency >= 1")
        if not self.temperature > 0:
            raise ConfigurationError(f"temperature must be positive, got {self.temperature!r}")

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "BackendConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigurationError(f"unknown backend settings: {sorted(unknown)}")
        return cls(**values)


@dataclass(frozen=True)
class RunConfig:
    """Raw sections of a config file; each is validated by its consumer."""

    scheduler: dict
    backend: dict
    synthetic: dict


def load_config(path: Optional[str | Path]) -> RunConfig:
    """Read a config file; ``None`` yields an empty configuration."""
    if path is None:
        return RunConfig({}, {}, {})
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config {path} is not valid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigurationError(f"config {path} must be a mapping at the top level")
    unknown = set(data) - _SECTIONS
    if unknown:
        raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
    sections = {}
    for name in _SECTIONS:
        value = data.get(name) or {}
        if not isinstance(value, dict):
            raise ConfigurationError(f"config section {name!r} must be a mapping")
        sections[name] = dict(value)
    return RunConfig(**sections)
