"""Interface system shared by the full-order and the surrogate-based Schwarz solvers.

Every subdomain exposes a local model mapping its interface values (all of
its own interface slots, held-fixed ones included) to a nodal field. The
interface unknowns are the free slots; block (i, Gamma) asks that the values
on Gamma equal the trace there of the neighbor's field.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import numpy as np
import scipy.sparse as sp

from .linalg import GmresResult, LinearOperator, gmres
from .mesh import QuadMesh, SubdomainTopology, TopologyError


class LocalModel(Protocol):
    n_slots: int

    def prepare(self, rows: np.ndarray) -> None: ...

    def trace(self, slots: np.ndarray) -> np.ndarray: ...

    def field(self, slots: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class Block:
    sub: int
    name: str
    start: int            # position in the subdomain's slot vector
    size: int
    neighbor: int
    neighbor_nodes: np.ndarray
    offset: int = 0       # position in the stacked interface vector


class CouplingLayout:
    def __init__(self, topologies: Sequence[SubdomainTopology],
                 fixed: Mapping[int, Mapping[str, float]] | None = None):
        fixed = fixed or {}
        self.topologies = list(topologies)
        self.n_slots = []
        self.fixed_slots: list[np.ndarray] = []
        self.blocks: list[Block] = []
        offset = 0
        for t in self.topologies:
            start = 0
            fvals = np.zeros(sum(len(s) for s in t.interfaces))
            mask = np.zeros(len(fvals), dtype=bool)
            for s in t.interfaces:
                n = len(s)
                if s.name in fixed.get(t.index, {}):
                    fvals[start:start + n] = fixed[t.index][s.name]
                    mask[start:start + n] = True
                else:
                    lk = t.link(s.name)
                    self.blocks.append(Block(t.index, s.name, start, n, lk.neighbor, lk.neighbor_nodes, offset))
                    offset += n
                start += n
            self.n_slots.append(start)
            self.fixed_slots.append(np.where(mask, fvals, 0.0))
        self.dim = offset
        # rows of each subdomain needed by the blocks that read from it
        self.rows: list[np.ndarray] = []
        self.row_offsets: dict[int, int] = {}
        for j in range(len(self.topologies)):
            rows, pos = [], 0
            for b_id, b in enumerate(self.blocks):
                if b.neighbor == j:
                    self.row_offsets[b_id] = pos
                    rows.append(b.neighbor_nodes)
                    pos += b.size
            self.rows.append(np.concatenate(rows).astype(np.int64) if rows else np.zeros(0, dtype=np.int64))
        # index maps for explicit assembly: trace row -> unknown, slot -> unknown (-1 if held fixed)
        self.row_unknowns = [np.zeros(len(r), dtype=np.int64) for r in self.rows]
        self.slot_unknowns = [np.full(n, -1, dtype=np.int64) for n in self.n_slots]
        for b_id, b in enumerate(self.blocks):
            p = self.row_offsets[b_id]
            self.row_unknowns[b.neighbor][p:p + b.size] = np.arange(b.offset, b.offset + b.size)
            self.slot_unknowns[b.sub][b.start:b.start + b.size] = np.arange(b.offset, b.offset + b.size)

    def scatter(self, lam: np.ndarray, with_fixed: bool = True) -> list[np.ndarray]:
        out = [f.copy() if with_fixed else np.zeros_like(f) for f in self.fixed_slots]
        for b in self.blocks:
            out[b.sub][b.start:b.start + b.size] = lam[b.offset:b.offset + b.size]
        return out

    def gather(self, traces: Sequence[np.ndarray]) -> np.ndarray:
        out = np.zeros(self.dim)
        for b_id, b in enumerate(self.blocks):
            p = self.row_offsets[b_id]
            out[b.offset:b.offset + b.size] = traces[b.neighbor][p:p + b.size]
        return out

    def block_slices(self) -> list[tuple[int, str, slice]]:
        return [(b.sub, b.name, slice(b.offset, b.offset + b.size)) for b in self.blocks]


@dataclass
class InterfaceSystem:
    layout: CouplingLayout
    models: list
    rhs: np.ndarray
    base: list[np.ndarray]

    @property
    def dim(self) -> int:
        return self.layout.dim

    def traces(self, lam: np.ndarray) -> list[np.ndarray]:
        slots = self.layout.scatter(lam)
        return [m.trace(s) for m, s in zip(self.models, slots)]

    def apply(self, lam: np.ndarray) -> np.ndarray:
        tr = self.traces(lam)
        return lam - self.layout.gather([t - b for t, b in zip(tr, self.base)])

    def residual(self, lam: np.ndarray) -> np.ndarray:
        """Nonlinear-safe interface residual: lam minus the neighbor traces."""
        return lam - self.layout.gather(self.traces(lam))

    def matrix(self) -> sp.csr_matrix | None:
        """Explicit (sparse) interface matrix, or None unless every local model
        exposes a linear trace map (``trace_matrix``)."""
        mats = [getattr(m, "trace_matrix", None) for m in self.models]
        if any(M is None for M in mats):
            return None
        ri, ci, vals = [np.arange(self.dim)], [np.arange(self.dim)], [np.ones(self.dim)]
        for M, rows, slots in zip(mats, self.layout.row_unknowns, self.layout.slot_unknowns):
            free = np.flatnonzero(slots >= 0)
            if len(rows) and len(free):
                ri.append(np.repeat(rows, len(free)))
                ci.append(np.tile(slots[free], len(rows)))
                vals.append(-M[:, free].ravel())
        coo = sp.coo_matrix((np.concatenate(vals), (np.concatenate(ri), np.concatenate(ci))),
                            shape=(self.dim, self.dim))
        return coo.tocsr()

    def operator(self) -> LinearOperator:
        A = self.matrix()
        if A is not None:
            return LinearOperator((self.dim, self.dim), A.dot)
        return LinearOperator((self.dim, self.dim), self.apply)


def build_system(layout: CouplingLayout, models: Sequence) -> InterfaceSystem:
    if len(models) != len(layout.topologies):
        raise TopologyError("one local model per subdomain required")
    for m, rows in zip(models, layout.rows):
        m.prepare(rows)
    base = [m.trace(f) for m, f in zip(models, layout.fixed_slots)]
    rhs = layout.gather(base)
    return InterfaceSystem(layout, list(models), rhs, base)


@dataclass
class CoupledResult:
    lam: np.ndarray
    slots: list[np.ndarray]
    iterations: int
    history: list[float]
    fields: list[np.ndarray]
    timings: dict = field(default_factory=dict)


def solve_system(system: InterfaceSystem, rel_tol: float = 1e-6, max_iter: int | None = None,
                 reconstruct: bool = True) -> CoupledResult:
    t0 = time.perf_counter()
    res: GmresResult = gmres(system.operator(), system.rhs, rel_tol, max_iter)
    t1 = time.perf_counter()
    slots = system.layout.scatter(res.x)
    fields = [m.field(s) for m, s in zip(system.models, slots)] if reconstruct else []
    t2 = time.perf_counter()
    return CoupledResult(res.x, slots, res.iterations, res.history, fields,
                         {"gmres": t1 - t0, "reconstruction": t2 - t1})


def compose_global(gmesh: QuadMesh, maps: Sequence[np.ndarray], fields: Sequence[np.ndarray]):
    """Global nodal field; every node takes its value from the lowest-indexed
    subdomain containing it. Returns (values, owner)."""
    values = np.full(gmesh.n_nodes, np.nan)
    owner = np.full(gmesh.n_nodes, -1)
    for i, (mp, f) in enumerate(zip(maps, fields)):
        new = owner[mp] < 0
        values[mp[new]] = f[new]
        owner[mp[new]] = i
    return values, owner
