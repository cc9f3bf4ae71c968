"""Run reports (JSON) and the CSV tables and fields written by the CLI.

Numbers are written with ``repr`` so that identical runs give identical files;
timing columns are the only run-to-run variation.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

TIMING_NOTE = "wall-clock seconds on the machine running the command; compare ratios, not absolute values"


@dataclass
class RunReport:
    command: str
    benchmark: str
    strategy: str | None = None
    timings: dict = field(default_factory=dict)
    modes: dict = field(default_factory=dict)        # subdomain -> {"after": n, "before": n}
    iterations: dict = field(default_factory=dict)   # label -> count
    errors: dict = field(default_factory=dict)       # label -> {"E2": .., "Einf": ..}
    stages: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"command": self.command, "benchmark": self.benchmark, "strategy": self.strategy,
                "timings": self.timings, "timing_note": TIMING_NOTE, "modes": self.modes,
                "iterations": self.iterations, "errors": self.errors, "stages": self.stages, "extra": self.extra}

    def write(self, out_dir) -> Path:
        p = Path(out_dir) / "report.json"
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(json.dumps(_clean(self.to_dict()), indent=1, sort_keys=True) + "\n")
        return p


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    return x


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def write_table(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return p


def read_table(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def write_field(path, nodes: np.ndarray, values: np.ndarray, name: str = "u") -> Path:
    rows = ((x, y, v) for (x, y), v in zip(np.asarray(nodes), np.asarray(values)))
    return write_table(path, ("x", "y", name), rows)


def write_error_map(path, nodes: np.ndarray, scaled_error: np.ndarray) -> Path:
    return write_field(path, nodes, scaled_error, "scaled_error")


def mu_tag(mu: Sequence[float]) -> str:
    return "_".join(f"{v:g}" for v in mu)


OFFLINE_HEADER = ("strategy", "subdomain", "N_AIP", "N_DP", "N_IP", "d_IP", "modes", "modes_before", "T_off")
ONLINE_HEADER = ("strategy", "mu", "N_GMRES", "T_on", "E2", "Einf")
COMPARE_HEADER = ("strategy", "N_AIP", "d_IP", "modes", "modes_before", "T_off", "mu", "N_GMRES", "T_on", "E2", "Einf")


def offline_rows(lib, label: str, t_off: float) -> list[tuple]:
    """One row per reference subdomain, counts taken from the library itself."""
    rows = []
    for name in sorted(lib.surrogates):
        s = lib.surrogates[name]
        after, before = s.mode_counts()
        rows.append((label, name, s.n_aip if s.strategy == "clustered" else "-", 1, len(s.interface_parts),
                     s.d_ip(), after, before, t_off))
    return rows
