"""Sparse direct solves and a matrix-free full GMRES."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu


class SingularMatrixError(ArithmeticError):
    pass


class NoConvergenceError(RuntimeError):
    def __init__(self, msg, x=None, history=None):
        super().__init__(msg)
        self.x = x
        self.history = history or []


def as_csr(A) -> sp.csr_matrix:
    """Canonical CSR: sorted column indices, duplicates summed, float64."""
    A = sp.csr_matrix(A, dtype=np.float64)
    A.sum_duplicates()
    A.sort_indices()
    return A


class Factorization:
    """Sparse LU of a square matrix (SuperLU)."""

    def __init__(self, A):
        A = sp.csc_matrix(A, dtype=np.float64)
        if A.shape[0] != A.shape[1]:
            raise ValueError("matrix must be square")
        self.shape = A.shape
        if A.shape[0] == 0:
            self._lu = None
            return
        try:
            self._lu = splu(A)
        except RuntimeError as exc:
            raise SingularMatrixError(str(exc)) from exc
        d = np.abs(self._lu.U.diagonal())
        if not np.all(np.isfinite(d)) or d.min() <= 1e-14 * max(d.max(), 1e-300):
            raise SingularMatrixError("matrix is numerically singular")

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=np.float64)
        if self._lu is None:
            return b.copy()
        return self._lu.solve(b)


def lu_factorize(A) -> Factorization:
    return Factorization(A)


def solve(fact: Factorization, b: np.ndarray) -> np.ndarray:
    return fact.solve(b)


@dataclass
class LinearOperator:
    shape: tuple[int, int]
    apply: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.apply(x)

    @classmethod
    def from_matrix(cls, A) -> "LinearOperator":
        return cls(A.shape, lambda x: A @ x)


def linearity_defect(op: LinearOperator, rng=None) -> float:
    """Relative defect of op(a x + b y) - a op(x) - b op(y) for random data."""
    rng = np.random.default_rng(rng)
    n = op.shape[1]
    x, y = rng.standard_normal(n), rng.standard_normal(n)
    a, b = rng.standard_normal(2)
    lhs = op(a * x + b * y)
    rhs = a * op(x) + b * op(y)
    scale = max(np.linalg.norm(lhs), np.linalg.norm(rhs), 1e-300)
    return float(np.linalg.norm(lhs - rhs) / scale)


@dataclass
class GmresResult:
    x: np.ndarray
    iterations: int
    history: list[float] = field(default_factory=list)


def gmres(op, rhs: np.ndarray, rel_tol: float = 1e-6, max_iter: int | None = None,
          x0: np.ndarray | None = None) -> GmresResult:
    """Full (unrestarted) GMRES. Arnoldi uses classical Gram-Schmidt applied
    twice, and the Givens rotations are accumulated in one small orthogonal
    matrix, so every iteration costs a fixed number of BLAS calls. ``history``
    holds relative residual estimates, one per iteration, starting with the
    initial residual."""
    apply = op.apply if isinstance(op, LinearOperator) else op
    b = np.asarray(rhs, dtype=float)
    n = len(b)
    max_iter = n if max_iter is None else max_iter
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return GmresResult(np.zeros(n), 0, [0.0])
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    r0 = b - apply(x0) if np.any(x0) else b.copy()
    beta = np.linalg.norm(r0)
    history = [beta / bnorm]
    if history[0] <= rel_tol:
        return GmresResult(x0.copy(), 0, history)

    m = max_iter
    cap = min(m, 32)                  # storage grows by doubling
    V = np.zeros((cap + 1, n))
    R = np.zeros((cap + 1, cap))      # rotated Hessenberg matrix (upper triangular)
    Qt = np.eye(cap + 1)              # product of the Givens rotations so far
    g = np.zeros(m + 1)
    g[0] = beta
    V[0] = r0 / beta

    def solution(k):
        y = np.linalg.solve(np.triu(R[:k, :k]), g[:k]) if k else np.zeros(0)
        return x0 + V[:k].T @ y

    for j in range(m):
        if j == cap:
            cap = min(2 * cap, m)
            V = np.vstack([V, np.zeros((cap + 1 - len(V), n))])
            R = np.pad(R, ((0, cap + 1 - len(R)), (0, cap - R.shape[1])))
            Q2 = np.eye(cap + 1)
            Q2[: len(Qt), : len(Qt)] = Qt
            Qt = Q2
        w = np.asarray(apply(V[j]), dtype=float)
        wnorm0 = math.sqrt(w @ w)
        Vj = V[: j + 1]
        h = Vj @ w
        w -= h @ Vj
        c = Vj @ w
        w -= c @ Vj
        h += c
        wn = math.sqrt(w @ w)
        breakdown = wn <= 1e-14 * max(wnorm0, 1e-300)
        if not breakdown:
            V[j + 1] = w / wn
        col = Qt[: j + 1, : j + 1] @ h
        d = math.hypot(col[j], wn)
        if d == 0.0:
            raise NoConvergenceError("GMRES breakdown with singular Hessenberg", solution(j), history)
        cs, sn = col[j] / d, wn / d
        rj = Qt[j, : j + 2] * cs + Qt[j + 1, : j + 2] * sn
        Qt[j + 1, : j + 2] = Qt[j + 1, : j + 2] * cs - Qt[j, : j + 2] * sn
        Qt[j, : j + 2] = rj
        col[j] = d
        R[: j + 1, j] = col
        gj = g[j]
        g[j + 1] = -sn * gj
        g[j] = cs * gj
        history.append(abs(g[j + 1]) / bnorm)
        if history[-1] <= rel_tol or breakdown:
            return GmresResult(solution(j + 1), j + 1, history)
    raise NoConvergenceError(f"GMRES did not reach {rel_tol} in {m} iterations", solution(m), history)
