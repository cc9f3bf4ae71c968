"""Separated (PGD) representations over space x parametric collocation grids.

A :class:`SeparatedTensor` stores ``sum_m U_m(x) prod_k phi_mk(mu_k)``. Spatial
modes live on all mesh nodes; parametric modes are tabulated on uniform
collocation grids and linearly interpolated between grid points.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu


class OutOfRangeError(ValueError):
    pass


class ShapeError(ValueError):
    pass


class EnrichmentError(RuntimeError):
    """Alternating-direction iteration blew up; ``partial`` holds the modes so far."""

    def __init__(self, msg, partial=None, report=None):
        super().__init__(msg)
        self.partial = partial
        self.report = report


@dataclass(frozen=True)
class GridDim:
    name: str
    lo: float
    hi: float
    n: int

    @property
    def points(self) -> np.ndarray:
        if self.n == 1:
            return np.array([self.lo])
        return np.linspace(self.lo, self.hi, self.n)

    @classmethod
    def from_spacing(cls, name: str, lo: float, hi: float, h: float) -> "GridDim":
        if hi < lo:
            raise ValueError(f"empty interval for {name}")
        if hi == lo:
            return cls(name, lo, hi, 1)
        n = (hi - lo) / h
        if abs(n - round(n)) > 1e-6 * max(1.0, n):
            raise ValueError(f"spacing {h} does not divide [{lo}, {hi}]")
        return cls(name, float(lo), float(hi), int(round(n)) + 1)


@dataclass(frozen=True)
class ParametricGrid:
    dims: tuple[GridDim, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(self.dims))
        for d in self.dims:
            if d.n < 1 or (d.n > 1 and not d.hi > d.lo):
                raise ValueError(f"invalid grid dimension {d}")

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(d.n for d in self.dims)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.dims)

    def points(self, k: int) -> np.ndarray:
        return self.dims[k].points

    def weights(self, k: int) -> np.ndarray:
        return np.full(self.dims[k].n, 1.0 / self.dims[k].n)

    def __add__(self, other: "ParametricGrid") -> "ParametricGrid":
        return ParametricGrid(self.dims + other.dims)

    def locate(self, mu: Sequence[float]) -> list[tuple[int, int, float]]:
        """Per dimension (left index, right index, right weight) of ``mu``."""
        if len(mu) != self.ndim:
            raise ShapeError(f"expected {self.ndim} parameter values, got {len(mu)}")
        out = []
        for d, x in zip(self.dims, mu):
            x = float(x)
            tol = 1e-12 * max(1.0, abs(d.lo), abs(d.hi))
            if not (d.lo - tol <= x <= d.hi + tol):
                raise OutOfRangeError(f"{d.name}={x} outside [{d.lo}, {d.hi}]")
            if d.n == 1:
                out.append((0, 0, 0.0))
                continue
            s = (min(max(x, d.lo), d.hi) - d.lo) / (d.hi - d.lo) * (d.n - 1)
            i = int(np.floor(s))
            t = s - i
            if abs(t) < 1e-9:
                t = 0.0
            elif abs(t - 1.0) < 1e-9:
                i, t = i + 1, 0.0
            if i >= d.n - 1:
                i, t = d.n - 1, 0.0
            out.append((i, min(i + 1, d.n - 1), t))
        return out

    def nearest_index(self, mu: Sequence[float]) -> tuple[int, ...]:
        return tuple(i if t < 0.5 else j for i, j, t in self.locate(mu))

    def to_dict(self) -> list[dict]:
        return [{"name": d.name, "lo": d.lo, "hi": d.hi, "n": d.n} for d in self.dims]

    @classmethod
    def from_dict(cls, data: list[dict]) -> "ParametricGrid":
        return cls(tuple(GridDim(d["name"], float(d["lo"]), float(d["hi"]), int(d["n"])) for d in data))


def interp_modes(modes: np.ndarray, loc: tuple[int, int, float]) -> np.ndarray:
    """Rows of ``modes`` (R x n) linearly interpolated at a located point."""
    i, j, t = loc
    if t == 0.0:
        return modes[:, i].copy()
    return (1.0 - t) * modes[:, i] + t * modes[:, j]


@dataclass(frozen=True, eq=False)
class SeparatedTensor:
    """Rank-R separated tensor. ``spatial`` is (n, R); ``params[k]`` is (R, n_k)."""

    spatial: np.ndarray
    params: tuple[np.ndarray, ...]
    grid: ParametricGrid

    def __post_init__(self):
        S = np.asarray(self.spatial, dtype=float)
        if S.ndim != 2:
            raise ShapeError("spatial modes must be a 2D array")
        object.__setattr__(self, "spatial", S)
        if len(self.params) != self.grid.ndim:
            raise ShapeError("one parametric mode array per grid dimension required")
        P = []
        for p, n in zip(self.params, self.grid.sizes):
            p = np.asarray(p, dtype=float)
            if p.size != S.shape[1] * n:
                raise ShapeError(f"parametric modes of shape {p.shape}, expected {(S.shape[1], n)}")
            P.append(p.reshape(S.shape[1], n))
        object.__setattr__(self, "params", tuple(P))

    @classmethod
    def zeros(cls, spatial_dim: int, grid: ParametricGrid) -> "SeparatedTensor":
        return cls(np.zeros((spatial_dim, 0)), tuple(np.zeros((0, n)) for n in grid.sizes), grid)

    @property
    def rank(self) -> int:
        return self.spatial.shape[1]

    @property
    def spatial_dim(self) -> int:
        return self.spatial.shape[0]

    def term(self, m: int) -> tuple[np.ndarray, list[np.ndarray]]:
        return self.spatial[:, m], [p[m] for p in self.params]

    def coefficients(self, mu: Sequence[float]) -> np.ndarray:
        """Per-mode parametric weights prod_k phi_mk(mu_k)."""
        c = np.ones(self.rank)
        for p, loc in zip(self.params, self.grid.locate(mu)):
            c *= interp_modes(p, loc)
        return c

    def evaluate(self, mu: Sequence[float]) -> np.ndarray:
        if self.rank == 0:
            self.grid.locate(mu)
            return np.zeros(self.spatial_dim)
        return self.spatial @ self.coefficients(mu)

    def evaluate_index(self, idx: Sequence[int]) -> np.ndarray:
        c = np.ones(self.rank)
        for p, i in zip(self.params, idx):
            c *= p[:, i]
        return self.spatial @ c

    def amplitudes(self) -> np.ndarray:
        """||U_m||_2 prod_k rms(phi_mk)."""
        a = np.linalg.norm(self.spatial, axis=0)
        for p, k in zip(self.params, range(self.grid.ndim)):
            a = a * np.sqrt(p**2 @ self.grid.weights(k))
        return a

    def slice_dims(self, values: dict[int, float]) -> "SeparatedTensor":
        """Fix some parametric dims (by index) at given values, folding them into the spatial modes."""
        keep = [k for k in range(self.grid.ndim) if k not in values]
        c = np.ones(self.rank)
        for k, x in values.items():
            loc = self.grid.locate([x if kk == k else self.grid.dims[kk].lo for kk in range(self.grid.ndim)])[k]
            c *= interp_modes(self.params[k], loc)
        return SeparatedTensor(self.spatial * c, tuple(self.params[k] for k in keep),
                               ParametricGrid(tuple(self.grid.dims[k] for k in keep)))

    def dense(self) -> np.ndarray:
        """Full tabulation, shape (n, n_1, ..., n_d). Small tensors only."""
        out = np.zeros((self.spatial_dim,) + self.grid.sizes)
        for m in range(self.rank):
            t = self.spatial[:, m]
            for p in self.params:
                t = np.multiply.outer(t, p[m])
            out += t
        return out


def add(a: SeparatedTensor, b: SeparatedTensor) -> SeparatedTensor:
    if a.grid != b.grid or a.spatial_dim != b.spatial_dim:
        raise ShapeError("tensors live on different index spaces")
    return SeparatedTensor(np.hstack([a.spatial, b.spatial]),
                           tuple(np.vstack([p, q]) for p, q in zip(a.params, b.params)), a.grid)


def scale(a: SeparatedTensor, c: float) -> SeparatedTensor:
    return SeparatedTensor(a.spatial * c, a.params, a.grid)


def inner(a: SeparatedTensor, b: SeparatedTensor) -> float:
    """Weighted inner product: Euclidean in space, mean over each parametric grid."""
    g = a.spatial.T @ b.spatial
    for k in range(a.grid.ndim):
        g = g * ((a.params[k] * a.grid.weights(k)) @ b.params[k].T)
    return float(g.sum())


def norm(a: SeparatedTensor) -> float:
    return float(np.sqrt(max(inner(a, a), 0.0)))


# ---------------------------------------------------------------- greedy solver

@dataclass
class EnrichmentReport:
    modes_before_compression: int = 0
    modes_after: int = 0
    amplitudes: list[float] = field(default_factory=list)
    sweeps: list[int] = field(default_factory=list)
    termination: str = ""
    seed: int = 0

    def to_dict(self) -> dict:
        return {"modes_before_compression": self.modes_before_compression, "modes_after": self.modes_after,
                "amplitudes": [float(a) for a in self.amplitudes], "sweeps": list(self.sweeps),
                "termination": self.termination, "seed": self.seed}


def _factor(fac: np.ndarray | None, n: int) -> np.ndarray:
    return np.ones(n) if fac is None else fac


def greedy_solve(op, rhs, enrich_tol: float = 1e-4, max_modes: int = 200, seed: int = 0,
                 max_sweeps: int = 30, sweep_tol: float = 1e-6) -> tuple[SeparatedTensor, EnrichmentReport]:
    """Greedy rank-one PGD for ``sum_l xi_l(mu) K_l u(mu) = sum_r g_r(mu) f_r``.

    ``op`` is an AffineOperator (terms with ``spatial`` free x free matrices and
    per-dimension ``factors``); ``rhs`` a SeparatedLoad over the same free DOFs.
    Each mode is found by alternating directions (space, then every parametric
    dimension) on the Galerkin form with collocation weights; the spatial mode
    carries the amplitude and parametric modes are scaled to unit max-norm.
    """
    grid = op.grid
    D = grid.ndim
    nf = len(op.free)
    sizes = grid.sizes
    w = [grid.weights(k) for k in range(D)]
    K = [t.spatial for t in op.terms]
    xi = [[_factor(t.factors[k], sizes[k]) for k in range(D)] for t in op.terms]
    F = np.column_stack([v for v, _ in rhs.terms]) if rhs.terms else np.zeros((nf, 0))
    g = [[_factor(fac[k], sizes[k]) for k in range(D)] for _, fac in rhs.terms]
    L, Rn = len(K), F.shape[1]
    rng = np.random.default_rng(seed)
    report = EnrichmentReport(seed=seed)

    U = np.zeros((nf, 0))
    Phi = [np.zeros((0, n)) for n in sizes]
    KU = [np.zeros((nf, 0)) for _ in range(L)]

    def result(U_, Phi_):
        full = np.zeros((op.n_nodes, U_.shape[1]))
        full[op.free] = U_
        return SeparatedTensor(full, tuple(Phi_), grid)

    if Rn == 0 or not np.any(F):
        report.termination = "zero right-hand side"
        return result(U, Phi), report

    first_amp = None
    while U.shape[1] < max_modes:
        R = rng.standard_normal(nf)
        phi = [np.ones(n) for n in sizes]
        amp_old = None
        for sweep in range(max_sweeps + 1):
            if sweep > 0:
                # spatial step
                a = np.array([np.prod([(w[k] * xi[l][k] * phi[k]) @ phi[k] for k in range(D)]) for l in range(L)])
                b = np.array([np.prod([(w[k] * g[r][k]) @ phi[k] for k in range(D)]) for r in range(Rn)])
                A = sum(a[l] * K[l] for l in range(L))
                r_vec = F @ b
                if U.shape[1]:
                    for l in range(L):
                        c = np.ones(U.shape[1])
                        for k in range(D):
                            c *= Phi[k] @ (w[k] * xi[l][k] * phi[k])
                        r_vec -= KU[l] @ c
                R = splu(sp.csc_matrix(A)).solve(r_vec)
            # parametric steps
            KR = [K[l] @ R for l in range(L)]
            RKR = np.array([R @ KR[l] for l in range(L)])
            RF = R @ F
            RKU = [R @ KU[l] for l in range(L)] if U.shape[1] else None
            for k in range(D):
                den = np.zeros(sizes[k])
                num = np.zeros(sizes[k])
                for l in range(L):
                    other = np.prod([(w[j] * xi[l][j] * phi[j]) @ phi[j] for j in range(D) if j != k])
                    den += xi[l][k] * (RKR[l] * other)
                    if RKU is not None:
                        c = RKU[l].copy()
                        for j in range(D):
                            if j != k:
                                c *= Phi[j] @ (w[j] * xi[l][j] * phi[j])
                        num -= xi[l][k] * (c @ Phi[k])
                for r in range(Rn):
                    other = np.prod([(w[j] * g[r][j]) @ phi[j] for j in range(D) if j != k])
                    num += g[r][k] * (RF[r] * other)
                with np.errstate(divide="ignore", invalid="ignore"):
                    phi[k] = np.where(den != 0, num / den, 0.0)
            # normalization: amplitude into R
            for k in range(D):
                s = np.max(np.abs(phi[k]))
                if s > 0 and np.isfinite(s):
                    phi[k] = phi[k] / s
                    R = R * s
            amp = float(np.linalg.norm(R) * np.prod([np.sqrt(w[k] @ phi[k] ** 2) for k in range(D)]))
            if not np.isfinite(amp):
                report.termination = "alternating iteration diverged"
                raise EnrichmentError(report.termination, result(U, Phi), report)
            if sweep > 0 and amp_old is not None and abs(amp - amp_old) <= sweep_tol * max(amp, 1e-300):
                break
            amp_old = amp
        report.sweeps.append(sweep)
        if first_amp is None:
            first_amp = amp
        report.amplitudes.append(amp)
        if amp == 0.0:
            report.termination = "zero mode"
            break
        U = np.column_stack([U, R])
        Phi = [np.vstack([Phi[k], phi[k]]) for k in range(D)]
        for l in range(L):
            KU[l] = np.column_stack([KU[l], K[l] @ R])
        if amp <= enrich_tol * first_amp:
            report.termination = "enrichment tolerance"
            break
    else:
        report.termination = "max modes"
    report.modes_before_compression = U.shape[1]
    report.modes_after = U.shape[1]
    return result(U, Phi), report


# ---------------------------------------------------------------- compression

def _grams(a: SeparatedTensor, b: SeparatedTensor, skip: int | None = None) -> np.ndarray:
    """Elementwise product of per-dimension Gram matrices <a_m, b_n> (skipping dim ``skip``; -1 = space)."""
    g = np.ones((a.rank, b.rank)) if skip == -1 else a.spatial.T @ b.spatial
    for k in range(a.grid.ndim):
        if k != skip:
            g = g * ((a.params[k] * a.grid.weights(k)) @ b.params[k].T)
    return g


def _rank_one_fit(r: SeparatedTensor, start: int, max_sweeps: int = 30,
                  sweep_tol: float = 1e-6) -> tuple[np.ndarray, list[np.ndarray]]:
    """Best rank-one approximation of ``r`` by alternating sweeps, started
    from its term ``start``; stops when the amplitude settles."""
    D = r.grid.ndim
    phi = [r.params[k][start].copy() for k in range(D)]
    u = r.spatial[:, start].copy()
    amp = 0.0
    for _ in range(max_sweeps):
        c = np.ones(r.rank)
        for k in range(D):
            c *= (r.params[k] * r.grid.weights(k)) @ phi[k]
        den = np.prod([(r.grid.weights(k) * phi[k]) @ phi[k] for k in range(D)])
        if den == 0:
            break
        u = r.spatial @ c / den
        for k in range(D):
            c = r.spatial.T @ u
            for j in range(D):
                if j != k:
                    c = c * ((r.params[j] * r.grid.weights(j)) @ phi[j])
            den = (u @ u) * np.prod([(r.grid.weights(j) * phi[j]) @ phi[j] for j in range(D) if j != k])
            if den == 0:
                break
            p = c @ r.params[k] / den
            s = np.max(np.abs(p))
            phi[k] = p / s if s > 0 else p
        new = np.linalg.norm(u) * np.prod([np.sqrt(r.grid.weights(k) @ phi[k] ** 2) for k in range(D)])
        if abs(new - amp) <= sweep_tol * new:
            break
        amp = new
    return u, phi


def _project(t: SeparatedTensor):
    """Coordinates of ``t`` in orthonormal bases of its factor spans.

    Every alternating update stays inside these spans, so compression can run
    on the small core and be mapped back. Returns the core tensor and the
    per-dimension bases (space first)."""
    Q0, R0 = np.linalg.qr(t.spatial)
    dims, params, bases = [], [], [Q0]
    for k, d in enumerate(t.grid.dims):
        Q, R = np.linalg.qr(t.params[k].T / np.sqrt(d.n))
        m = Q.shape[1]
        dims.append(GridDim(d.name, 0.0, float(m - 1), m))
        params.append(R.T * np.sqrt(m))
        bases.append(Q * np.sqrt(d.n / m))
    return SeparatedTensor(R0, tuple(params), ParametricGrid(tuple(dims))), bases


def compress(t: SeparatedTensor, comp_tol: float = 1e-3, pointwise_dims: int | None = None,
             max_samples: int = 65536) -> SeparatedTensor:
    """Lower-rank re-approximation of ``t`` by a greedy PGD of ``t`` itself.

    Rank grows one mode at a time, the new mode being the alternating-direction
    rank-one fit of the current residual; after each increase all modes are
    refitted by alternating least squares. Stops at the first rank whose error
    is within ``comp_tol`` relative, both in the global weighted norm and
    at every point of the first ``pointwise_dims`` parametric dimensions (all by
    default; remaining dimensions are measured in norm). Grids larger than
    ``max_samples`` points are checked on an evenly strided subgrid. Returns
    ``t`` itself if the full rank is needed. The iteration runs on the core of
    ``t`` in orthonormal factor bases, so its cost does not grow with the mesh
    or grid sizes.
    """
    if t.rank == 0:
        return t
    if inner(t, t) <= 0.0:
        return SeparatedTensor.zeros(t.spatial_dim, t.grid)
    npw = t.grid.ndim if pointwise_dims is None else pointwise_dims
    core, bases = _project(t)
    # a coarse subgrid screens candidates before the full sampled check
    checks = [_PointwiseCheck(core, bases, npw, comp_tol, n) for n in sorted({min(1024, max_samples), max_samples})]
    c = _compress_core(core, comp_tol, checks)
    if c is None:
        return t
    spatial = bases[0] @ c.spatial
    spatial[~t.spatial.any(axis=1)] = 0.0  # rows outside the span stay exactly zero
    params = []
    for k in range(t.grid.ndim):
        P = (bases[k + 1] @ c.params[k].T).T
        s = np.max(np.abs(P), axis=1)
        s[s == 0] = 1.0
        params.append(P / s[:, None])
        spatial = spatial * s
    return SeparatedTensor(spatial, tuple(params), t.grid)


class _PointwiseCheck:
    """Relative error of a core approximation at sampled parameter points."""

    def __init__(self, core: SeparatedTensor, bases, npw: int, tol: float, max_samples: int):
        self.core, self.npw = core, npw
        per_dim = max(2, int(max_samples ** (1.0 / max(npw, 1))))
        self.values = []  # basis values at the sampled original grid points
        for k in range(npw):
            n = bases[k + 1].shape[0]
            idx = np.unique(np.linspace(0, n - 1, min(n, per_dim)).round().astype(int))
            self.values.append(bases[k + 1][idx])
        ref = self._norms2(core.spatial, core.params)
        self.floor = np.maximum(ref, 1e-24 * ref.max()) * tol**2

    def _norms2(self, spatial, params) -> np.ndarray:
        g = spatial.T @ spatial
        for k in range(self.npw, self.core.grid.ndim):
            g = g * ((params[k] * self.core.grid.weights(k)) @ params[k].T)
        A = [V @ params[k].T for k, V in enumerate(self.values)]
        if not A:
            return np.array([g.sum()])
        # sum_rs g_rs prod_k A_k[i_k, r] A_k[i_k, s] over the sampled tensor grid
        rows = []
        for idx in itertools.product(*(range(a.shape[0]) for a in A[:-1])):
            gi = g
            if idx:
                w = np.prod([A[k][i] for k, i in enumerate(idx)], axis=0)
                gi = g * np.outer(w, w)
            rows.append(np.einsum("ir,rs,is->i", A[-1], gi, A[-1]))
        return np.concatenate(rows)

    def __call__(self, c: SeparatedTensor) -> bool:
        res = add(self.core, scale(c, -1.0))
        return bool(np.all(self._norms2(res.spatial, res.params) <= self.floor))


def _compress_core(t: SeparatedTensor, comp_tol: float, checks, max_sweeps: int = 100,
                   sweep_tol: float = 1e-6) -> SeparatedTensor | None:
    tt = inner(t, t)
    D = t.grid.ndim
    target = comp_tol**2 * tt

    def err2(c):
        return max(tt - 2.0 * inner(t, c) + inner(c, c), 0.0)

    c = SeparatedTensor.zeros(t.spatial_dim, t.grid)
    for _ in range(1, t.rank):
        res = add(t, scale(c, -1.0)) if c.rank else t
        u, phi = _rank_one_fit(res, int(np.argmax(res.amplitudes())))
        c = SeparatedTensor(np.column_stack([c.spatial, u]),
                            tuple(np.vstack([c.params[k], phi[k]]) for k in range(D)), t.grid)
        prev = err2(c)
        for _ in range(max_sweeps):
            if prev <= target and all(chk(c) for chk in checks):
                return c
            # spatial modes: U_c H = U_t G
            H = _grams(c, c, skip=-1)
            G = _grams(t, c, skip=-1)
            S = np.linalg.lstsq(H, (t.spatial @ G).T, rcond=None)[0].T
            c = SeparatedTensor(S, c.params, t.grid)
            for k in range(D):
                H = _grams(c, c, skip=k)
                G = _grams(t, c, skip=k)
                P = np.linalg.lstsq(H, G.T @ t.params[k], rcond=None)[0]
                params = list(c.params)
                # rescale to unit max-norm, pushing magnitude into space
                s = np.max(np.abs(P), axis=1)
                s[s == 0] = 1.0
                params[k] = P / s[:, None]
                c = SeparatedTensor(c.spatial * s, tuple(params), t.grid)
            e = err2(c)
            converged = abs(prev - e) <= sweep_tol * prev
            prev = e
            if converged:
                break
        if prev <= target and all(chk(c) for chk in checks):
            return c
    return None
