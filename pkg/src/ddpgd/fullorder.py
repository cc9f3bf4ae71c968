"""Reference solvers (monolithic FEM and full-order overlapping Schwarz) and the
error measures used to score surrogates."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import fem
from .benchmarks import Benchmark
from .coupling import CouplingLayout, build_system, compose_global, solve_system
from .linalg import Factorization
from .mesh import QuadMesh


@dataclass
class FullOrderSolution:
    mesh: QuadMesh
    values: np.ndarray
    owner: np.ndarray | None = None
    iterations: int | None = None
    history: list[float] = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    local_fields: list[np.ndarray] = field(default_factory=list)
    lam: np.ndarray | None = None


def _dirichlet_solve(A, F, nodes, vals, n):
    u = np.zeros(n)
    u[nodes] = vals
    free = fem.free_dofs(n, nodes)
    rhs = F[free] - A[free][:, nodes] @ vals
    u[free] = Factorization(A[free][:, free]).solve(rhs)
    return u


def monolithic_system(bench: Benchmark, mu: Sequence[float]):
    """(mesh, A, F, dirichlet nodes, dirichlet values, node maps) on the union mesh."""
    gmesh, maps, owner = bench.global_mesh(mu)
    A, F = None, np.zeros(gmesh.n_nodes)
    for i in range(len(bench.instances)):
        sel = owner == i
        if not np.any(sel):
            continue
        sub = QuadMesh(gmesh.nodes, gmesh.elements[sel], element_regions=gmesh.element_regions[sel])
        Ai, Fi = bench.reference_of(i).assemble_physical(sub, bench.local_mu(i, mu))
        A = Ai if A is None else A + Ai
        F += Fi
    seen, nodes, vals = set(), [], []
    for i in range(len(bench.instances)):
        ref = bench.reference_of(i)
        pm = bench.physical_mesh(i, mu)
        for tag, g in ref.neumann.items():
            edges = maps[i][pm.edge_tags[tag]]
            keep = [e for e in edges.tolist() if tuple(sorted(e)) not in seen]
            seen.update(tuple(sorted(e)) for e in keep)
            if keep:
                em = QuadMesh(gmesh.nodes, gmesh.elements, {tag: np.array(keep)})
                F += fem.load_vector(em, 0.0, {tag: g})
        dn, dv = bench.local_dirichlet(i, mu, pm)
        nodes.append(maps[i][dn])
        vals.append(dv)
    nodes = np.concatenate(nodes)
    vals = np.concatenate(vals)
    nodes, first = np.unique(nodes, return_index=True)
    return gmesh, A.tocsr(), F, nodes, vals[first], maps


def solve_monolithic(bench: Benchmark, mu: Sequence[float]) -> FullOrderSolution:
    t0 = time.perf_counter()
    gmesh, A, F, nodes, vals, _ = monolithic_system(bench, mu)
    u = _dirichlet_solve(A, F, nodes, vals, gmesh.n_nodes)
    return FullOrderSolution(gmesh, u, timings={"total": time.perf_counter() - t0})


class FullOrderLocal:
    """Exact local solver u(Lambda) = g + E Lambda + A_II^{-1}(F_I - A_IC c)."""

    def __init__(self, A, F, dirichlet_nodes, dirichlet_values, slot_nodes):
        self.n = A.shape[0]
        self.slot_nodes = np.asarray(slot_nodes, dtype=np.int64)
        self.n_slots = len(self.slot_nodes)
        self.dn = np.asarray(dirichlet_nodes, dtype=np.int64)
        self.constrained = np.concatenate([self.dn, self.slot_nodes])
        self.free = fem.free_dofs(self.n, self.constrained)
        Af = A[self.free]
        self.A_ic = Af[:, self.constrained].tocsr()
        self.lu = Factorization(Af[:, self.free])
        self.F_i = F[self.free]
        self.g = np.asarray(dirichlet_values, dtype=float)
        self.rows = np.zeros(0, dtype=np.int64)

    def prepare(self, rows):
        self.rows = np.asarray(rows, dtype=np.int64)

    def field(self, slots):
        c = np.concatenate([self.g, slots])
        u = np.zeros(self.n)
        u[self.constrained] = c
        u[self.free] = self.lu.solve(self.F_i - self.A_ic @ c)
        return u

    def trace(self, slots):
        return self.field(slots)[self.rows]


def local_full_order(bench: Benchmark, i: int, mu, mesh: QuadMesh) -> FullOrderLocal:
    ref = bench.reference_of(i)
    mu_i = bench.local_mu(i, mu)
    A, F = ref.assemble_physical(mesh, mu_i)
    if ref.neumann:
        F = F + fem.load_vector(mesh, 0.0, ref.neumann)
    dn = ref.topology.dirichlet_nodes
    g = ref.dirichlet_values(mesh, mu_i)[dn]
    return FullOrderLocal(A.tocsr(), F, dn, g, ref.topology.interface_nodes)


def solve_ddfem(bench: Benchmark, mu: Sequence[float], rel_tol: float = 1e-6,
                max_iter: int | None = None) -> FullOrderSolution:
    """Overlapping Schwarz on the interface system with exact local solves.
    Timing covers local assembly, factorization, GMRES and reconstruction."""
    t0 = time.perf_counter()
    tops = bench.topologies(mu)
    fixed = {i: dict(inst.fixed_interfaces) for i, inst in enumerate(bench.instances)}
    layout = CouplingLayout(tops, fixed)
    models = [local_full_order(bench, i, mu, t.mesh) for i, t in enumerate(tops)]
    system = build_system(layout, models)
    t1 = time.perf_counter()
    res = solve_system(system, rel_tol, max_iter)
    t2 = time.perf_counter()
    gmesh, maps, _ = bench.global_mesh(mu)
    values, owner = compose_global(gmesh, maps, res.fields)
    return FullOrderSolution(gmesh, values, owner, res.iterations, res.history,
                             {"setup": t1 - t0, "solve": t2 - t1, "total": t2 - t0},
                             res.fields, res.lam)


# ---------------------------------------------------------------- error measures

def _quad_values(mesh: QuadMesh, u):
    if callable(u):
        geo = fem.element_geometry(mesh)
        return u(geo.qpts[..., 0], geo.qpts[..., 1])
    return np.asarray(u, dtype=float)[mesh.elements] @ fem._N.T


def error_l2(u, ref, mesh: QuadMesh) -> float:
    """Relative L2(Omega) error by 2x2 Gauss quadrature; ``ref`` may be a
    nodal vector or a function f(x, y)."""
    geo = fem.element_geometry(mesh)
    uq = _quad_values(mesh, u)
    rq = _quad_values(mesh, ref)
    den = np.sum(geo.detj * rq**2)
    if den == 0:
        raise ZeroDivisionError("reference field has zero L2 norm")
    return float(np.sqrt(np.sum(geo.detj * (uq - rq) ** 2) / den))


def error_linf(u, ref) -> float:
    ref = np.asarray(ref, dtype=float)
    m = np.max(np.abs(ref))
    if m == 0:
        raise ZeroDivisionError("reference field is identically zero")
    return float(np.max(np.abs(np.asarray(u) - ref)) / m)


def error_map(u, ref) -> np.ndarray:
    ref = np.asarray(ref, dtype=float)
    m = np.max(np.abs(ref))
    if m == 0:
        raise ZeroDivisionError("reference field is identically zero")
    return np.abs(np.asarray(u) - ref) / m
