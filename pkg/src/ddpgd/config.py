"""Run configuration: JSON files with a versioned schema plus built-in presets."""

from __future__ import annotations

import copy
import inspect
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .benchmarks import BENCHMARKS, TABLE_CONDUCTIVITIES
from .dd_offline import Tolerances

CONFIG_SCHEMA = "ddpgd-config/1"
REFERENCES = ("exact", "monolithic", "ddfem", "none")


class ConfigError(ValueError):
    pass


@dataclass
class BenchmarkConfig:
    benchmark: str
    strategy: str = "reduced_dim"          # "reduced_dim" | "clustered"
    n_aip: int = 1
    aip_points: int = 21
    interval_factor: float = 1.5
    options: dict = field(default_factory=dict)   # keyword overrides for the benchmark constructor
    tolerances: Tolerances = field(default_factory=Tolerances)
    queries: list[list[float]] = field(default_factory=list)
    reference: str = "none"
    out: str = "runs"
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        self.validate()

    # -- validation ---------------------------------------------------------
    def validate(self) -> None:
        if self.benchmark not in BENCHMARKS:
            raise ConfigError(f"unknown benchmark {self.benchmark!r}; expected one of {sorted(BENCHMARKS)}")
        if self.strategy not in ("reduced_dim", "clustered"):
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.strategy == "clustered" and self.n_aip < 1:
            raise ConfigError("n_aip must be at least 1")
        if self.aip_points < 2:
            raise ConfigError("aip_points must be at least 2")
        if self.interval_factor <= 0:
            raise ConfigError("interval_factor must be positive")
        t = self.tolerances
        if min(t.enrich, t.compress, t.gmres) <= 0 or t.max_modes < 1:
            raise ConfigError("tolerances must be positive")
        if self.reference not in REFERENCES:
            raise ConfigError(f"reference must be one of {REFERENCES}")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        params = inspect.signature(BENCHMARKS[self.benchmark]).parameters
        unknown = sorted(set(self.options) - set(params))
        if unknown:
            raise ConfigError(f"unknown options for {self.benchmark}: {unknown}")

    # -- construction -------------------------------------------------------
    def make_benchmark(self):
        try:
            bench = BENCHMARKS[self.benchmark](**self.options)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid options for {self.benchmark}: {exc}") from exc
        if any(d.n < 1 for d in bench.grid.dims):
            raise ConfigError("parametric grids must be nonempty")
        return bench

    def default_queries(self, bench) -> list[list[float]]:
        return [list(q) for q in (self.queries or bench.queries)]

    @property
    def strategy_label(self) -> str:
        return "reduced" if self.strategy == "reduced_dim" else f"aip:{self.n_aip}"

    def with_strategy(self, label: str) -> "BenchmarkConfig":
        out = copy.deepcopy(self)
        out.strategy, out.n_aip = parse_strategy(label, self.n_aip)
        out.validate()
        return out

    def to_dict(self) -> dict:
        return {"schema": CONFIG_SCHEMA, "benchmark": self.benchmark, "strategy": self.strategy,
                "n_aip": self.n_aip, "aip_points": self.aip_points, "interval_factor": self.interval_factor,
                "options": _jsonable(self.options), "tolerances": self.tolerances.to_dict(),
                "queries": self.queries, "reference": self.reference, "out": self.out,
                "seed": self.seed, "jobs": self.jobs}

    @classmethod
    def from_dict(cls, data: dict) -> "BenchmarkConfig":
        data = dict(data)
        schema = data.pop("schema", CONFIG_SCHEMA)
        if schema != CONFIG_SCHEMA:
            raise ConfigError(f"unsupported config schema {schema!r}")
        if "benchmark" not in data:
            raise ConfigError("config needs a 'benchmark' field")
        known = set(inspect.signature(cls).parameters)
        extra = sorted(set(data) - known)
        if extra:
            raise ConfigError(f"unknown config fields {extra}")
        tol = data.pop("tolerances", {})
        try:
            data["tolerances"] = Tolerances(**tol)
            data["queries"] = [[float(v) for v in q] for q in data.get("queries", [])]
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def _jsonable(x: Any):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if hasattr(x, "tolist"):
        return x.tolist()
    return x


def parse_strategy(label: str, default_n: int = 1) -> tuple[str, int]:
    """'reduced' / 'reduced_dim' or 'aip:N' / 'clustered:N'."""
    s = label.strip().lower()
    if s in ("reduced", "reduced_dim"):
        return "reduced_dim", default_n
    head, _, tail = s.partition(":")
    if head in ("aip", "clustered"):
        try:
            n = int(tail) if tail else default_n
        except ValueError:
            raise ConfigError(f"bad strategy {label!r}") from None
        if n < 1:
            raise ConfigError("n_aip must be at least 1")
        return "clustered", n
    raise ConfigError(f"bad strategy {label!r}; use 'reduced' or 'aip:N'")


PRESETS: dict[str, dict] = {
    "poisson_2d": {"benchmark": "poisson_2d", "queries": [[3.0], [30.0]], "reference": "exact"},
    "poisson_coarse": {"benchmark": "poisson_2d", "options": {"h": 0.25, "h_mu": 0.1},
                       "queries": [[3.0], [30.0]], "reference": "exact"},
    "graetz": {"benchmark": "graetz", "queries": [[1.25e4, 3.0]], "reference": "monolithic"},
    "thermal_cross": {"benchmark": "thermal_cross", "queries": [list(TABLE_CONDUCTIVITIES)],
                      "reference": "ddfem", "jobs": 4},
}


def preset(name: str) -> BenchmarkConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    return BenchmarkConfig.from_dict(copy.deepcopy(PRESETS[name]))


def load_config(path) -> BenchmarkConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    return BenchmarkConfig.from_dict(data)
