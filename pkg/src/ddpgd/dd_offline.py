"""Offline construction of the local PGD surrogates.

Per subdomain we build the data part (forcing, fluxes and Dirichlet lift with
homogeneous interface data) and one parametric solution per interface degree
of freedom (``reduced_dim``), or one per cluster of interface nodes whose
nodal values become extra parametric dimensions (``clustered``).
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .fem import AffineOperator, ConfigurationError, SeparatedLoad
from .pgd import (EnrichmentError, EnrichmentReport, GridDim, ParametricGrid, SeparatedTensor, compress,
                  greedy_solve)

SCHEMA = "ddpgd-library/1"


class CorruptLibraryError(ValueError):
    pass


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class Tolerances:
    enrich: float = 1e-4
    compress: float = 1e-3
    gmres: float = 1e-6
    max_modes: int = 200

    def to_dict(self) -> dict:
        return {"enrich": self.enrich, "compress": self.compress, "gmres": self.gmres, "max_modes": self.max_modes}


@dataclass(eq=False)
class InterfaceStack:
    """All interface parts of a reduced-dimensionality surrogate side by side.

    Columns ``starts[j]:starts[j+1]`` of ``spatial`` (and of every parametric
    factor) are the modes of the part for slot ``j``.
    """
    spatial: np.ndarray
    params: tuple[np.ndarray, ...]
    slot: np.ndarray
    starts: np.ndarray
    _rows: dict = field(default_factory=dict, repr=False)

    def rows(self, rows: np.ndarray) -> np.ndarray:
        """Row restriction of ``spatial``, cached per row set."""
        key = np.asarray(rows, dtype=np.int64).tobytes()
        if key not in self._rows:
            self._rows[key] = np.ascontiguousarray(self.spatial[rows])
        return self._rows[key]


@dataclass(eq=False)
class LocalSurrogate:
    name: str
    strategy: str                        # "reduced_dim" | "clustered"
    grid: ParametricGrid                 # local physical parameters
    slot_nodes: np.ndarray               # interface nodes, in slot order
    data_part: SeparatedTensor
    lift_part: SeparatedTensor
    interface_parts: list[SeparatedTensor]
    clusters: list[list[int]] = field(default_factory=list)
    intervals: np.ndarray | None = None  # (n_slots, 2) for clustered
    aip_points: int = 0
    n_aip: int = 0
    reports: dict[str, dict] = field(default_factory=dict)
    seeds: dict[str, int] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def n_slots(self) -> int:
        return len(self.slot_nodes)

    def parts(self) -> list[tuple[str, SeparatedTensor]]:
        out = [("data", self.data_part), ("lift", self.lift_part)]
        out += [(f"iface_{j:04d}", t) for j, t in enumerate(self.interface_parts)]
        return out

    def mode_counts(self) -> tuple[int, int]:
        """(after, before) compression, over data and interface parts."""
        after = self.data_part.rank + sum(t.rank for t in self.interface_parts)
        before = sum(r.get("modes_before_compression", 0) for k, r in self.reports.items() if k != "lift")
        return after, before

    @cached_property
    def stack(self) -> InterfaceStack:
        parts = self.interface_parts
        ranks = np.array([t.rank for t in parts], dtype=np.int64)
        starts = np.concatenate([[0], np.cumsum(ranks)])
        spatial = np.hstack([t.spatial for t in parts]) if parts else np.zeros((self.data_part.spatial_dim, 0))
        params = tuple(np.vstack([t.params[k] for t in parts]) if parts else np.zeros((0, d.n))
                       for k, d in enumerate(self.grid.dims))
        return InterfaceStack(spatial, params, np.repeat(np.arange(len(parts)), ranks), starts)

    @cached_property
    def _selections(self) -> dict:
        return {}

    def slot_selection(self, rows: np.ndarray) -> np.ndarray:
        """0/1 matrix mapping slot values to the nodes ``rows`` (zero rows off the interface)."""
        rows = np.asarray(rows, dtype=np.int64)
        key = rows.tobytes()
        if key not in self._selections:
            nodes = np.asarray(self.slot_nodes, dtype=np.int64)
            order = np.argsort(nodes)
            hit = np.isin(rows, nodes)
            E = np.zeros((len(rows), len(nodes)))
            E[np.flatnonzero(hit), order[np.searchsorted(nodes[order], rows[hit])]] = 1.0
            self._selections[key] = E
        return self._selections[key]

    def d_ip(self, spatial_dims: int = 2) -> int:
        extra = self.n_aip if self.strategy == "clustered" else 0
        return spatial_dims + self.grid.ndim + extra


@dataclass(eq=False)
class SurrogateLibrary:
    benchmark: str
    strategy: str
    tolerances: Tolerances
    surrogates: dict[str, LocalSurrogate]
    config: dict = field(default_factory=dict)
    created: str = ""


# ---------------------------------------------------------------- builders

def _solve_part(op, load, tol: Tolerances, seed: int, pointwise_dims: int | None = None):
    t0 = time.perf_counter()
    t, rep = greedy_solve(op, load, tol.enrich, tol.max_modes, seed=seed)
    c = compress(t, tol.compress, pointwise_dims)
    rep.modes_after = c.rank
    out = rep.to_dict()
    out["time"] = time.perf_counter() - t0
    return c, out


def build_data_surrogate(op: AffineOperator, load: SeparatedLoad, tol: Tolerances = Tolerances(), seed: int = 0):
    """Data problem: homogeneous interface values, forcing and lifted Dirichlet data."""
    return _solve_part(op, load, tol, seed)


def _column_terms(op: AffineOperator, nodes: Sequence[int], extra_factors=None) -> list:
    """Right-hand side terms -A(mu) phi_j for interface nodes ``nodes``."""
    pos = np.searchsorted(op.constrained, nodes)
    if np.any(op.constrained[np.minimum(pos, len(op.constrained) - 1)] != nodes):
        raise ValueError("interface node is not a constrained DOF")
    terms = []
    for q, p in enumerate(pos):
        for t in op.terms:
            col = -np.asarray(t.coupling[:, [p]].todense()).ravel()
            if not np.any(col):
                continue
            fac = tuple(t.factors) + (tuple(extra_factors[q]) if extra_factors is not None else ())
            terms.append((col, fac))
    return terms


def _unitary_task(args):
    op, node, tol, seed = args
    load = SeparatedLoad(len(op.free), op.grid, tuple(_column_terms(op, [node])))
    try:
        return _solve_part(op, load, tol, seed)
    except EnrichmentError as exc:
        raise EnrichmentError(f"interface node {node}: {exc}", exc.partial, exc.report) from exc


def _cluster_task(args):
    op, nodes, dims, tol, seed = args
    extra = ParametricGrid(tuple(dims))
    ext = op.extended(extra)
    factors = [[d.points if r == q else None for r, d in enumerate(dims)] for q in range(len(nodes))]
    load = SeparatedLoad(len(op.free), ext.grid, tuple(_column_terms(op, nodes, factors)))
    # the cluster field vanishes at zero interface values: relative accuracy per physical mu only
    return _solve_part(ext, load, tol, seed, pointwise_dims=op.grid.ndim)


def _run(tasks, fn, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, tasks))


def build_unitary_surrogates(op: AffineOperator, slot_nodes: Sequence[int], tol: Tolerances = Tolerances(),
                             seed: int = 0, jobs: int = 1, order: Sequence[int] | None = None):
    """One PGD solution per interface DOF, for the unit trace on that DOF.
    Seeds are ``seed + 1 + j`` so results do not depend on build order."""
    idx = list(range(len(slot_nodes))) if order is None else list(order)
    tasks = [(op, int(slot_nodes[j]), tol, seed + 1 + j) for j in idx]
    res = _run(tasks, _unitary_task, jobs)
    out = [None] * len(slot_nodes)
    for j, r in zip(idx, res):
        out[j] = r
    return out


def make_clusters(interface_sizes: Sequence[int], n_aip: int) -> list[list[int]]:
    """Contiguous runs of at most ``n_aip`` slots, never crossing an interface."""
    if n_aip < 1:
        raise ConfigurationError("n_aip must be positive")
    out, start = [], 0
    for n in interface_sizes:
        for s in range(0, n, n_aip):
            out.append(list(range(start + s, start + min(s + n_aip, n))))
        start += n
    if any(len(c) == 0 for c in out):
        raise ConfigurationError("empty cluster")
    return out


def build_clustered_surrogates(op: AffineOperator, slot_nodes: Sequence[int], clusters: Sequence[Sequence[int]],
                               intervals: np.ndarray, aip_points: int = 21, tol: Tolerances = Tolerances(),
                               seed: int = 0, jobs: int = 1):
    """One PGD solution per cluster over (space, mu, Lambda_cluster)."""
    tasks = []
    for c_id, cl in enumerate(clusters):
        if not cl:
            raise ConfigurationError("empty cluster")
        dims = [GridDim(f"lam{q}", float(intervals[s, 0]), float(intervals[s, 1]), aip_points)
                for q, s in enumerate(cl)]
        tasks.append((op, [int(slot_nodes[s]) for s in cl], dims, tol, seed + 1 + c_id))
    return _run(tasks, _cluster_task, jobs)


def lift_tensor(op: AffineOperator, lifts) -> SeparatedTensor:
    grid = op.grid
    if not lifts:
        return SeparatedTensor.zeros(op.n_nodes, grid)
    U = np.column_stack([nodal for nodal, _ in lifts])
    P = tuple(np.vstack([np.ones(n) if f[k] is None else f[k] for _, f in lifts]) for k, n in enumerate(grid.sizes))
    return SeparatedTensor(U, P, grid)


def build_local_surrogate(ref, strategy: str = "reduced_dim", tol: Tolerances = Tolerances(), seed: int = 0,
                          n_aip: int = 1, intervals: np.ndarray | None = None, aip_points: int = 21,
                          jobs: int = 1) -> LocalSurrogate:
    """Full surrogate of one reference problem (a ``benchmarks.ReferenceProblem``)."""
    t0 = time.perf_counter()
    op, load, lifts = ref.affine_system()
    slot_nodes = ref.topology.interface_nodes
    data, data_rep = build_data_surrogate(op, load, tol, seed)
    t1 = time.perf_counter()
    reports = {"data": data_rep, "lift": {"modes_before_compression": len(lifts), "modes_after": len(lifts)}}
    clusters: list[list[int]] = []
    if strategy == "reduced_dim":
        res = build_unitary_surrogates(op, slot_nodes, tol, seed, jobs)
    elif strategy == "clustered":
        if intervals is None:
            raise ValueError("clustered surrogates need interface value intervals")
        clusters = make_clusters([len(s) for s in ref.topology.interfaces], n_aip)
        res = build_clustered_surrogates(op, slot_nodes, clusters, np.asarray(intervals), aip_points, tol, seed, jobs)
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    parts = [r[0] for r in res]
    for j, r in enumerate(res):
        reports[f"iface_{j:04d}"] = r[1]
    t2 = time.perf_counter()
    return LocalSurrogate(ref.name, strategy, ref.grid, np.asarray(slot_nodes), data, lift_tensor(op, lifts), parts,
                          clusters, None if intervals is None else np.asarray(intervals, dtype=float),
                          aip_points if strategy == "clustered" else 0, n_aip if strategy == "clustered" else 0,
                          reports, {"base": seed}, {"data": t1 - t0, "interface": t2 - t1, "total": t2 - t0})


# ---------------------------------------------------------------- persistence

def tensor_bytes(t: SeparatedTensor) -> bytes:
    header = np.array([t.rank, t.spatial_dim, *t.grid.sizes], dtype="<u8").tobytes()
    chunks = [header]
    for m in range(t.rank):
        chunks.append(np.ascontiguousarray(t.spatial[:, m], dtype="<f8").tobytes())
        for p in t.params:
            chunks.append(np.ascontiguousarray(p[m], dtype="<f8").tobytes())
    return b"".join(chunks)


def tensor_from_bytes(data: bytes, grid: ParametricGrid) -> SeparatedTensor:
    nd = grid.ndim
    head = np.frombuffer(data[: 8 * (2 + nd)], dtype="<u8")
    if len(head) != 2 + nd or tuple(int(x) for x in head[2:]) != grid.sizes:
        raise CorruptLibraryError("tensor header does not match its grid")
    rank, n = int(head[0]), int(head[1])
    body = np.frombuffer(data[8 * (2 + nd):], dtype="<f8")
    per = n + sum(grid.sizes)
    if len(body) != rank * per:
        raise CorruptLibraryError("tensor payload has the wrong length")
    body = body.reshape(rank, per) if rank else body.reshape(0, per)
    S = body[:, :n].T.copy()
    params, off = [], n
    for k in grid.sizes:
        params.append(body[:, off:off + k].copy())
        off += k
    return SeparatedTensor(S, tuple(params), grid)


def _part_grid(s: LocalSurrogate, kind: str, j: int | None) -> ParametricGrid:
    if s.strategy == "clustered" and kind == "iface":
        dims = tuple(GridDim(f"lam{q}", float(s.intervals[slot, 0]), float(s.intervals[slot, 1]), s.aip_points)
                     for q, slot in enumerate(s.clusters[j]))
        return s.grid + ParametricGrid(dims)
    return s.grid


def _manifest(lib: SurrogateLibrary, files: dict[str, bytes]) -> dict:
    subs = {}
    for name, s in lib.surrogates.items():
        parts = []
        for pname, t in s.parts():
            fname = f"{name}__{pname}.bin"
            parts.append({"name": pname, "file": fname, "rank": t.rank, "spatial_dim": t.spatial_dim,
                          "sha256": hashlib.sha256(files[fname]).hexdigest()})
        subs[name] = {"strategy": s.strategy, "grid": s.grid.to_dict(), "slot_nodes": [int(x) for x in s.slot_nodes],
                      "clusters": s.clusters, "n_aip": s.n_aip, "aip_points": s.aip_points,
                      "intervals": None if s.intervals is None else s.intervals.tolist(),
                      "parts": parts, "reports": s.reports, "seeds": s.seeds, "timings": s.timings}
    return {"schema": SCHEMA, "benchmark": lib.benchmark, "strategy": lib.strategy,
            "tolerances": lib.tolerances.to_dict(), "config": lib.config, "created": lib.created,
            "surrogates": subs}


def save_library(lib: SurrogateLibrary, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if not lib.created:
        lib.created = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    files = {}
    for name, s in lib.surrogates.items():
        for pname, t in s.parts():
            files[f"{name}__{pname}.bin"] = tensor_bytes(t)
    for fname, data in files.items():
        (path / fname).write_bytes(data)
    text = json.dumps(_manifest(lib, files), indent=1, sort_keys=True)
    (path / "manifest.json").write_text(text + "\n")


def load_library(path, benchmark: str | None = None) -> SurrogateLibrary:
    path = Path(path)
    try:
        man = json.loads((path / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptLibraryError(f"cannot read manifest: {exc}") from exc
    if man.get("schema") != SCHEMA:
        raise SchemaError(f"unsupported library schema {man.get('schema')!r}")
    if benchmark is not None and man["benchmark"] != benchmark:
        raise SchemaError(f"library built for {man['benchmark']!r}, run configured for {benchmark!r}")
    subs = {}
    for name, m in man["surrogates"].items():
        grid = ParametricGrid.from_dict(m["grid"])
        shell = LocalSurrogate(name, m["strategy"], grid, np.array(m["slot_nodes"], dtype=np.int64), None, None, [],
                               [list(c) for c in m["clusters"]],
                               None if m["intervals"] is None else np.array(m["intervals"], dtype=float),
                               int(m["aip_points"]), int(m["n_aip"]), m["reports"], m["seeds"], m["timings"])
        tensors = {}
        for p in m["parts"]:
            data = (path / p["file"]).read_bytes()
            if hashlib.sha256(data).hexdigest() != p["sha256"]:
                raise CorruptLibraryError(f"checksum mismatch for {p['file']}")
            kind = "iface" if p["name"].startswith("iface_") else p["name"]
            j = int(p["name"].split("_")[1]) if kind == "iface" else None
            t = tensor_from_bytes(data, _part_grid(shell, kind, j))
            if t.rank != p["rank"]:
                raise CorruptLibraryError(f"manifest rank differs from stored tensor {p['file']}")
            tensors[p["name"]] = t
        shell.data_part = tensors["data"]
        shell.lift_part = tensors["lift"]
        shell.interface_parts = [tensors[k] for k in sorted(k for k in tensors if k.startswith("iface_"))]
        subs[name] = shell
    return SurrogateLibrary(man["benchmark"], man["strategy"], Tolerances(**man["tolerances"]), subs,
                            man["config"], man["created"])


def build_library(bench, strategy: str = "reduced_dim", tol: Tolerances = Tolerances(), seed: int = 0,
                  n_aip: int | dict = 1, aip_points: int = 21, intervals: dict | None = None, jobs: int = 1,
                  config: dict | None = None) -> SurrogateLibrary:
    """Surrogates for every reference problem of a benchmark."""
    subs = {}
    for k, (name, ref) in enumerate(sorted(bench.references.items())):
        na = n_aip[name] if isinstance(n_aip, dict) else n_aip
        iv = None
        if strategy == "clustered":
            iv = intervals[name]
        subs[name] = build_local_surrogate(ref, strategy, tol, seed + 100000 * k, na, iv, aip_points, jobs)
    return SurrogateLibrary(bench.id, strategy, tol, subs, dict(config or {}))


def default_intervals(bench, factor: float = 1.5) -> dict:
    """Per-slot interval [-factor S, factor S], S = max |u| of a monolithic solve
    at the centre of the parameter box."""
    from .fullorder import solve_monolithic
    mid = [0.5 * (d.lo + d.hi) for d in bench.grid.dims]
    S = float(np.max(np.abs(solve_monolithic(bench, mid).values)))
    return {name: np.tile([-factor * S, factor * S], (len(ref.topology.interface_nodes), 1))
            for name, ref in bench.references.items()}
