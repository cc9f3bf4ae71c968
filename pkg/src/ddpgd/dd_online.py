"""Online coupling of the local surrogates.

For ``reduced_dim`` surrogates all parameter dependence is resolved once per
query (pre-evaluation) and every GMRES iteration is a linear combination of
pre-evaluated columns. ``clustered`` surrogates keep their interface-value
dimensions and interpolate the corresponding modes at each iteration.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .coupling import CouplingLayout, InterfaceSystem, build_system, compose_global, solve_system
from .dd_offline import LocalSurrogate, SchemaError, SurrogateLibrary
from .linalg import LinearOperator
from .pgd import OutOfRangeError, interp_modes


class ParameterError(ValueError):
    pass


class EvaluatedSurrogate:
    """A local surrogate with its physical parameters fixed at ``mu``."""

    def __init__(self, sur: LocalSurrogate, mu: Sequence[float], clamp: bool = False):
        try:
            self.mu = tuple(float(x) for x in mu)
            sur.grid.locate(self.mu)
        except OutOfRangeError as exc:
            raise ParameterError(str(exc)) from exc
        self.sur = sur
        self.strategy = sur.strategy
        self.clamp = clamp
        self.n_slots = sur.n_slots
        self.slot_nodes = np.asarray(sur.slot_nodes, dtype=np.int64)
        self.u0 = sur.data_part.evaluate(self.mu) + sur.lift_part.evaluate(self.mu)
        self.n = len(self.u0)
        npar = sur.grid.ndim
        if self.strategy == "reduced_dim":
            # one interpolation per dimension over the modes of all slots
            self._stack = sur.stack
            self._c = np.ones(self._stack.spatial.shape[1])
            for p, loc in zip(self._stack.params, sur.grid.locate(self.mu)):
                self._c *= interp_modes(p, loc)
        else:
            self._clusters = []
            for cl, t in zip(sur.clusters, sur.interface_parts):
                c_mu = np.ones(t.rank)
                for p, loc in zip(t.params[:npar], t.grid.locate(list(self.mu) + [d.lo for d in t.grid.dims[npar:]])[:npar]):
                    c_mu *= interp_modes(p, loc)
                self._clusters.append((np.asarray(cl), t, c_mu, t.params[npar:], t.grid.dims[npar:]))
        self.rows = np.zeros(0, dtype=np.int64)

    # -- reduced_dim ------------------------------------------------------
    def columns(self, rows=None) -> np.ndarray:
        """Matrix whose column j is evaluate(u^j, mu) (optionally restricted to ``rows``)."""
        st = self._stack
        S = st.spatial if rows is None else st.rows(rows)
        out = np.zeros((S.shape[0], self.n_slots))
        nonempty = np.flatnonzero(st.starts[:-1] < st.starts[1:])
        if len(nonempty):
            out[:, nonempty] = np.add.reduceat(S * self._c, st.starts[nonempty], axis=1)
        return out

    # -- clustered --------------------------------------------------------
    def _lambda_weights(self, slots, cl, lam_params, lam_dims, c_mu):
        c = c_mu.copy()
        for p, d, s in zip(lam_params, lam_dims, cl):
            x = float(slots[s])
            tol = 1e-12 * max(1.0, abs(d.lo), abs(d.hi))
            if x < d.lo - tol or x > d.hi + tol:
                if not self.clamp:
                    raise OutOfRangeError(f"interface value {x:.4g} outside [{d.lo:.4g}, {d.hi:.4g}]")
                x = min(max(x, d.lo), d.hi)
            u = (x - d.lo) / (d.hi - d.lo) * (d.n - 1)
            i = min(int(np.floor(u)), d.n - 2)
            t = u - i
            c *= (1.0 - t) * p[:, i] + t * p[:, i + 1]
        return c

    def _clustered(self, slots, rows=None):
        out = np.zeros(self.n if rows is None else len(rows))
        for cl, t, c_mu, lp, ld in self._clusters:
            c = self._lambda_weights(slots, cl, lp, ld, c_mu)
            S = t.spatial if rows is None else self._rows_cache[id(t)]
            out += S @ c
        return out

    # -- local model protocol ---------------------------------------------
    @property
    def trace_matrix(self) -> np.ndarray | None:
        """d trace / d slots for linear local models (after ``prepare``)."""
        return self._M_rows if self.strategy == "reduced_dim" else None

    def prepare(self, rows) -> None:
        self.rows = np.asarray(rows, dtype=np.int64)
        self._E_rows = self.sur.slot_selection(self.rows)
        self._u0_rows = self.u0[self.rows]
        if self.strategy == "reduced_dim":
            self._M_rows = self.columns(self.rows) + self._E_rows
        else:
            self._rows_cache = {id(t): t.spatial[self.rows] for _, t, _, _, _ in self._clusters}

    def trace(self, slots) -> np.ndarray:
        if self.strategy == "reduced_dim":
            return self._u0_rows + self._M_rows @ slots
        return self._u0_rows + self._E_rows @ slots + self._clustered(slots, self.rows)

    def apply_local_operator(self, slots) -> np.ndarray:
        """Homogeneous-data response to interface values: sum_j Lambda_j (u^j + phi^j)."""
        slots = np.asarray(slots, dtype=float)
        if len(slots) != self.n_slots:
            raise ValueError(f"expected {self.n_slots} interface values, got {len(slots)}")
        ext = np.zeros(self.n)
        ext[self.slot_nodes] = slots
        if self.strategy == "reduced_dim":
            return self._stack.spatial @ (self._c * slots[self._stack.slot]) + ext
        return self._clustered(slots) + ext

    def field(self, slots) -> np.ndarray:
        return self.u0 + self.apply_local_operator(slots)


def pre_evaluate(lib: SurrogateLibrary, bench, mu: Sequence[float], clamp: bool = False) -> list[EvaluatedSurrogate]:
    try:
        bench.grid.locate(mu)
    except OutOfRangeError as exc:
        raise ParameterError(str(exc)) from exc
    out = []
    for i, inst in enumerate(bench.instances):
        out.append(EvaluatedSurrogate(lib.surrogates[inst.reference], bench.local_mu(i, mu), clamp))
    return out


def check_compatible(lib: SurrogateLibrary, bench) -> None:
    """Raise SchemaError unless every surrogate matches its reference problem."""
    if lib.benchmark != bench.id:
        raise SchemaError(f"library built for {lib.benchmark!r}, benchmark is {bench.id!r}")
    if sorted(lib.surrogates) != sorted(bench.references):
        raise SchemaError("library subdomains differ from the benchmark's reference problems")
    for name, ref in bench.references.items():
        s = lib.surrogates[name]
        if s.data_part.spatial_dim != ref.topology.mesh.n_nodes:
            raise SchemaError(f"{name}: library mesh has {s.data_part.spatial_dim} nodes, "
                              f"benchmark mesh has {ref.topology.mesh.n_nodes}")
        if not np.array_equal(s.slot_nodes, ref.topology.interface_nodes):
            raise SchemaError(f"{name}: interface numbering differs")
        if s.grid.to_dict() != ref.grid.to_dict():
            raise SchemaError(f"{name}: parametric grid differs")


class OnlineSolver:
    """Holds the coupling layout of a benchmark so that repeated queries only
    pay for pre-evaluation, GMRES and reconstruction."""

    def __init__(self, lib: SurrogateLibrary, bench, layout_mu: Sequence[float] | None = None):
        check_compatible(lib, bench)
        self.lib = lib
        self.bench = bench
        mu0 = layout_mu or [0.5 * (d.lo + d.hi) for d in bench.grid.dims]
        fixed = {i: dict(inst.fixed_interfaces) for i, inst in enumerate(bench.instances)}
        self.layout = CouplingLayout(bench.topologies(mu0), fixed)

    def build_interface_system(self, mu, clamp: bool = False) -> InterfaceSystem:
        evs = pre_evaluate(self.lib, self.bench, mu, clamp)
        return build_system(self.layout, evs)

    def solve(self, mu, rel_tol: float | None = None, clamp: bool = False, max_iter: int | None = None):
        rel_tol = self.lib.tolerances.gmres if rel_tol is None else rel_tol
        t0 = time.perf_counter()
        system = self.build_interface_system(mu, clamp)
        t1 = time.perf_counter()
        res = solve_system(system, rel_tol, max_iter)
        t2 = time.perf_counter()
        res.timings = {"pre_evaluation": t1 - t0, **res.timings, "total": t2 - t0}
        return CouplingSolution(tuple(float(x) for x in mu), res.lam, res.slots, res.iterations, res.history,
                                res.fields, res.timings, system)


@dataclass
class CouplingSolution:
    mu: tuple
    lam: np.ndarray
    slots: list[np.ndarray]
    iterations: int
    history: list[float]
    fields: list[np.ndarray]
    timings: dict = field(default_factory=dict)
    system: InterfaceSystem | None = None

    def global_field(self, bench):
        gmesh, maps, _ = bench.global_mesh(self.mu)
        values, owner = compose_global(gmesh, maps, self.fields)
        return gmesh, values, owner


def solve_online(system: InterfaceSystem, rel_tol: float = 1e-6):
    return solve_system(system, rel_tol)
