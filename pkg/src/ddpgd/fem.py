"""Q1 finite element assembly on quadrilateral meshes.

Everything is vectorized over elements with 2x2 Gauss quadrature. Assembled
operators are split into a free-DOF block and a free x constrained coupling
block so that Dirichlet and interface values can be lifted out.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .mesh import DIRICHLET, QuadMesh
from .pgd import ParametricGrid


class AssemblyError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


_G = 1.0 / np.sqrt(3.0)
_QXI = np.array([-_G, _G, _G, -_G])
_QETA = np.array([-_G, -_G, _G, _G])
_XI = np.array([-1.0, 1.0, 1.0, -1.0])
_ETA = np.array([-1.0, -1.0, 1.0, 1.0])

# shape values and reference derivatives, indexed [q, a]
_N = 0.25 * (1 + np.outer(_QXI, _XI)) * (1 + np.outer(_QETA, _ETA))
_DXI = 0.25 * _XI[None, :] * (1 + np.outer(_QETA, _ETA))
_DETA = 0.25 * _ETA[None, :] * (1 + np.outer(_QXI, _XI))


@dataclass(frozen=True)
class ElementGeometry:
    detj: np.ndarray      # (E, Q)
    grad: np.ndarray      # (E, Q, A, 2) physical shape gradients
    qpts: np.ndarray      # (E, Q, 2)


def element_geometry(mesh: QuadMesh, qxi=_QXI, qeta=_QETA) -> ElementGeometry:
    X = mesh.nodes[mesh.elements]                       # (E, 4, 2)
    N = 0.25 * (1 + np.outer(qxi, _XI)) * (1 + np.outer(qeta, _ETA))
    dxi = 0.25 * _XI[None, :] * (1 + np.outer(qeta, _ETA))
    deta = 0.25 * _ETA[None, :] * (1 + np.outer(qxi, _XI))
    J = np.empty((len(X), len(qxi), 2, 2))
    J[:, :, 0, :] = np.einsum("qa,ead->eqd", dxi, X)
    J[:, :, 1, :] = np.einsum("qa,ead->eqd", deta, X)
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    if np.any(det <= 0):
        raise AssemblyError("degenerate or inverted element")
    inv = np.empty_like(J)
    inv[..., 0, 0] = J[..., 1, 1] / det
    inv[..., 0, 1] = -J[..., 0, 1] / det
    inv[..., 1, 0] = -J[..., 1, 0] / det
    inv[..., 1, 1] = J[..., 0, 0] / det
    ref = np.stack([np.broadcast_to(dxi, (len(qxi), 4)), np.broadcast_to(deta, (len(qxi), 4))], axis=-1)
    grad = np.einsum("eqij,qaj->eqai", inv, ref)
    qpts = np.einsum("qa,ead->eqd", N, X)
    return ElementGeometry(det, grad, qpts)


# ---------------------------------------------------------------- coefficients

@dataclass(frozen=True, eq=False)
class CoefficientField:
    """constant(value) | nodal(vector) | region(map region -> value) | function(f(x, y))."""

    kind: str = "constant"
    value: float = 1.0
    nodal: np.ndarray | None = None
    regions: Mapping[str, float] | None = None
    region_assignment: np.ndarray | None = None
    func: Callable | None = None

    @classmethod
    def constant(cls, value: float) -> "CoefficientField":
        return cls("constant", value=float(value))

    @classmethod
    def from_nodal(cls, values) -> "CoefficientField":
        return cls("nodal", nodal=np.asarray(values, dtype=float))

    @classmethod
    def region(cls, regions: Mapping[str, float], assignment=None) -> "CoefficientField":
        return cls("region", regions=dict(regions),
                   region_assignment=None if assignment is None else np.asarray(assignment))

    @classmethod
    def function(cls, f: Callable) -> "CoefficientField":
        return cls("function", func=f)

    def at_quadrature(self, mesh: QuadMesh, geo: ElementGeometry | None = None) -> np.ndarray:
        E = mesh.n_elements
        if self.kind == "constant":
            return np.full((E, 4), self.value)
        if self.kind == "nodal":
            if self.nodal is None or len(self.nodal) != mesh.n_nodes:
                raise ConfigurationError("nodal coefficient length does not match the mesh")
            return self.nodal[mesh.elements] @ _N.T
        if self.kind == "region":
            assign = self.region_assignment if self.region_assignment is not None else mesh.element_regions
            if assign is None or len(assign) != E:
                raise ConfigurationError("region coefficient needs one region id per element")
            missing = set(np.unique(assign).tolist()) - set(self.regions)
            if missing:
                raise ConfigurationError(f"no coefficient value for regions {sorted(missing)}")
            vals = np.array([self.regions[r] for r in assign.tolist()], dtype=float)
            return np.repeat(vals[:, None], 4, axis=1)
        if self.kind == "function":
            geo = geo or element_geometry(mesh)
            x, y = geo.qpts[..., 0], geo.qpts[..., 1]
            return np.broadcast_to(np.asarray(self.func(x, y), dtype=float), x.shape).copy()
        raise ConfigurationError(f"unknown coefficient kind {self.kind!r}")


def _as_field(c) -> CoefficientField:
    if isinstance(c, CoefficientField):
        return c
    if callable(c):
        return CoefficientField.function(c)
    return CoefficientField.constant(c)


# ---------------------------------------------------------------- scatter / split

def _scatter(mesh: QuadMesh, Ke: np.ndarray) -> sp.csr_matrix:
    el = mesh.elements
    rows = np.repeat(el, 4, axis=1).ravel()
    cols = np.tile(el, (1, 4)).ravel()
    A = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def free_dofs(n_nodes: int, constrained) -> np.ndarray:
    mask = np.ones(n_nodes, dtype=bool)
    if constrained is not None:
        mask[np.asarray(constrained, dtype=np.int64)] = False
    return np.flatnonzero(mask)


def split(A: sp.csr_matrix, constrained) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """(free x free, free x constrained) blocks of a full nodal matrix."""
    c = np.zeros(0, dtype=np.int64) if constrained is None else np.asarray(constrained, dtype=np.int64)
    f = free_dofs(A.shape[0], c)
    if len(f) == 0:
        raise AssemblyError("no free degrees of freedom")
    Af = A[f]
    return Af[:, f].tocsr(), Af[:, c].tocsr()


# ---------------------------------------------------------------- operators

def diffusion_matrix(mesh: QuadMesh, b=1.0, components: str = "xy") -> sp.csr_matrix:
    """Full nodal matrix of int b (d_x u d_x v [x in components] + d_y u d_y v [y in components])."""
    geo = element_geometry(mesh)
    bq = _as_field(b).at_quadrature(mesh, geo)
    G = geo.grad
    prod = np.zeros(G.shape[:2] + (4, 4))
    if "x" in components:
        prod += G[..., :, None, 0] * G[..., None, :, 0]
    if "y" in components:
        prod += G[..., :, None, 1] * G[..., None, :, 1]
    Ke = np.einsum("eq,eqab->eab", bq * geo.detj, prod)
    return _scatter(mesh, Ke)


def assemble_diffusion(mesh: QuadMesh, b=1.0, constrained=None, components: str = "xy"):
    """Diffusion operator split into (spatial_matrix, coupling_matrix)."""
    return split(diffusion_matrix(mesh, b, components), constrained)


def _velocity_at(velocity, pts: np.ndarray) -> np.ndarray:
    if callable(velocity):
        ax, ay = velocity(pts[..., 0], pts[..., 1])
        return np.stack(np.broadcast_arrays(np.asarray(ax, dtype=float), np.asarray(ay, dtype=float)), axis=-1)
    return np.broadcast_to(np.asarray(velocity, dtype=float), pts.shape).copy()


def streamline_length(mesh: QuadMesh, velocity) -> tuple[np.ndarray, np.ndarray]:
    """Element length along the flow and flow speed, both at element centres."""
    cgeo = element_geometry(mesh, np.array([0.0]), np.array([0.0]))
    a = _velocity_at(velocity, cgeo.qpts)[:, 0]
    speed = np.linalg.norm(a, axis=1)
    proj = np.abs(np.einsum("ed,ead->ea", a, cgeo.grad[:, 0])).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = np.where(proj > 0, 2.0 * speed / proj, 0.0)
    return h, speed


def _convection_blocks(mesh: QuadMesh, velocity, weight=None):
    geo = element_geometry(mesh)
    a = _velocity_at(velocity, geo.qpts)                          # (E, Q, 2)
    adg = np.einsum("eqd,eqad->eqa", a, geo.grad)                 # a . grad N_a
    C = np.einsum("eq,qa,eqb->eab", geo.detj, _N, adg)
    if weight is None:
        return C, None, geo
    S = np.einsum("eq,eqa,eqb->eab", geo.detj * weight[:, None], adg, adg)
    return C, S, geo


def assemble_convection_supg(mesh: QuadMesh, velocity, constrained=None, stabilization: bool = True,
                             element_mask=None) -> dict[str, tuple[sp.csr_matrix, sp.csr_matrix]]:
    """Galerkin convection and the two separable SUPG pieces.

    With tau_e = h_e/(2|a_e|) - nu/|a_e|^2 the streamline term
    int tau (a.grad u)(a.grad v) splits into ``supg_h`` (weight h/(2|a|), no
    nu) minus nu times ``supg_nu`` (weight 1/|a|^2). On rectangles the
    second-derivative consistency term vanishes for Q1, so with f = 0 these
    are all the stabilization terms. ``element_mask`` restricts every term
    to a subset of elements.
    """
    h, speed = streamline_length(mesh, velocity)
    if np.any(h[speed > 0] <= 0):
        raise AssemblyError("zero element size along the flow")
    mask = np.ones(mesh.n_elements) if element_mask is None else np.asarray(element_mask, dtype=float)
    C, _, _ = _convection_blocks(mesh, velocity)
    out = {"convection": split(_scatter(mesh, C * mask[:, None, None]), constrained)}
    if stabilization:
        with np.errstate(divide="ignore", invalid="ignore"):
            w_h = np.where(speed > 0, h / (2.0 * speed), 0.0) * mask
            w_nu = np.where(speed > 0, 1.0 / speed**2, 0.0) * mask
        _, S_h, _ = _convection_blocks(mesh, velocity, w_h)
        _, S_nu, _ = _convection_blocks(mesh, velocity, w_nu)
        out["supg_h"] = split(_scatter(mesh, S_h), constrained)
        out["supg_nu"] = split(_scatter(mesh, S_nu), constrained)
    return out


def supg_tau(h: np.ndarray, speed: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """Elementwise tau = h/(2|a|) (1 - 1/Pe), Pe = |a| h / (2 nu); zero where a = 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        pe = speed * h / (2.0 * nu)
        tau = np.where(speed > 0, h / (2.0 * speed) * (1.0 - 1.0 / pe), 0.0)
    return tau


def advection_diffusion_matrix(mesh: QuadMesh, nu, velocity, stabilization: bool = True) -> sp.csr_matrix:
    """Full nodal matrix of int nu grad u.grad v + (a.grad u) v + tau (a.grad u)(a.grad v),
    with tau evaluated per element from the physical mesh and nu at the element centre."""
    geo = element_geometry(mesh)
    nuq = _as_field(nu).at_quadrature(mesh, geo)
    G = geo.grad
    K = np.einsum("eq,eqad,eqbd->eab", nuq * geo.detj, G, G)
    if stabilization:
        h, speed = streamline_length(mesh, velocity)
        cgeo = element_geometry(mesh, np.array([0.0]), np.array([0.0]))
        nu_c = _as_field(nu).at_quadrature(mesh, cgeo)[:, 0]
        tau = supg_tau(h, speed, nu_c)
        C, S, _ = _convection_blocks(mesh, velocity, tau)
        return _scatter(mesh, K + C + S)
    C, _, _ = _convection_blocks(mesh, velocity)
    return _scatter(mesh, K + C)


def load_vector(mesh: QuadMesh, f=0.0, neumann_data: Mapping[str, object] | None = None) -> np.ndarray:
    """Full nodal load: int f v plus int_edge g v over the tagged Neumann edges."""
    out = np.zeros(mesh.n_nodes)
    if not (isinstance(f, (int, float)) and f == 0):
        geo = element_geometry(mesh)
        fq = _as_field(f).at_quadrature(mesh, geo)
        Fe = np.einsum("eq,qa->ea", fq * geo.detj, _N)
        np.add.at(out, mesh.elements, Fe)
    for tag, g in (neumann_data or {}).items():
        if tag == DIRICHLET:
            raise ConfigurationError("flux prescribed on a Dirichlet boundary")
        edges = mesh.edge_tags.get(tag)
        if edges is None or len(edges) == 0:
            raise ConfigurationError(f"flux on untagged edges {tag!r}")
        P0, P1 = mesh.nodes[edges[:, 0]], mesh.nodes[edges[:, 1]]
        length = np.linalg.norm(P1 - P0, axis=1)
        s = np.array([0.5 - 0.5 * _G, 0.5 + 0.5 * _G])
        for sq in s:
            pts = P0 + sq * (P1 - P0)
            gq = np.broadcast_to(np.asarray(g(pts[:, 0], pts[:, 1]) if callable(g) else g, dtype=float), len(pts))
            np.add.at(out, edges[:, 0], 0.5 * length * gq * (1.0 - sq))
            np.add.at(out, edges[:, 1], 0.5 * length * gq * sq)
    return out


def assemble_load(mesh: QuadMesh, f=0.0, neumann_data: Mapping[str, object] | None = None,
                  constrained=None) -> np.ndarray:
    """Load vector over the free DOFs."""
    return load_vector(mesh, f, neumann_data)[free_dofs(mesh.n_nodes, constrained)]


def mass_matrix(mesh: QuadMesh) -> sp.csr_matrix:
    geo = element_geometry(mesh)
    Ke = np.einsum("eq,qa,qb->eab", geo.detj, _N, _N)
    return _scatter(mesh, Ke)


def build_dirichlet_lift(mesh: QuadMesh, boundary_values, nodes=None) -> np.ndarray:
    """Nodal interpolant of the Dirichlet data extended by zero.

    ``boundary_values`` is a mapping node -> value or a callable g(x, y);
    ``nodes`` defaults to the Dirichlet-tagged nodes of the mesh.
    """
    nodes = mesh.nodes_with_tag(DIRICHLET) if nodes is None else np.asarray(nodes, dtype=np.int64)
    out = np.zeros(mesh.n_nodes)
    if callable(boundary_values):
        P = mesh.nodes[nodes]
        out[nodes] = boundary_values(P[:, 0], P[:, 1])
        return out
    missing = [int(n) for n in nodes if int(n) not in boundary_values]
    if missing:
        raise ConfigurationError(f"no Dirichlet value for nodes {missing[:5]}")
    for n in nodes:
        out[n] = boundary_values[int(n)]
    return out


# ---------------------------------------------------------------- affine structures

@dataclass(frozen=True, eq=False)
class AffineTerm:
    spatial: sp.csr_matrix
    coupling: sp.csr_matrix
    factors: tuple            # one vector (or None = ones) per grid dimension
    label: str = ""


@dataclass(frozen=True, eq=False)
class AffineOperator:
    """sum_l prod_k factor_lk(mu_k) (K_l, B_l) over a fixed free/constrained split."""

    n_nodes: int
    free: np.ndarray
    constrained: np.ndarray
    grid: ParametricGrid
    terms: tuple[AffineTerm, ...]

    def __post_init__(self):
        for t in self.terms:
            if t.spatial.shape != (len(self.free), len(self.free)):
                raise AssemblyError("spatial matrices do not share the free index space")
            if len(t.factors) != self.grid.ndim:
                raise AssemblyError("one parametric factor per grid dimension required")
            for f, n in zip(t.factors, self.grid.sizes):
                if f is not None and len(f) != n:
                    raise AssemblyError("parametric factor length differs from its grid")

    def coefficients_at(self, idx: Sequence[int]) -> np.ndarray:
        return np.array([np.prod([1.0 if f is None else f[i] for f, i in zip(t.factors, idx)]) for t in self.terms])

    def matrix_at(self, idx: Sequence[int]) -> sp.csr_matrix:
        c = self.coefficients_at(idx)
        return sum(ci * t.spatial for ci, t in zip(c, self.terms)).tocsr()

    def coupling_at(self, idx: Sequence[int]) -> sp.csr_matrix:
        c = self.coefficients_at(idx)
        return sum(ci * t.coupling for ci, t in zip(c, self.terms)).tocsr()

    def extended(self, extra: ParametricGrid) -> "AffineOperator":
        """Same operator over a grid with extra trailing dims it does not depend on."""
        terms = tuple(AffineTerm(t.spatial, t.coupling, tuple(t.factors) + (None,) * extra.ndim, t.label)
                      for t in self.terms)
        return AffineOperator(self.n_nodes, self.free, self.constrained, self.grid + extra, terms)


@dataclass(frozen=True, eq=False)
class SeparatedLoad:
    n_free: int
    grid: ParametricGrid
    terms: tuple = ()         # (vector over free DOFs, factors)

    def at(self, idx: Sequence[int]) -> np.ndarray:
        out = np.zeros(self.n_free)
        for v, fac in self.terms:
            out += np.prod([1.0 if f is None else f[i] for f, i in zip(fac, idx)]) * v
        return out


def lifted_load(op: AffineOperator, nodal: np.ndarray, factors: tuple) -> list:
    """Terms of -A(mu) applied to a separated nodal lift mode (only constrained values matter)."""
    vals = nodal[op.constrained]
    if not np.any(vals):
        return []
    out = []
    for t in op.terms:
        fac = tuple(None if (a is None and b is None) else (_factor1(a, n) * _factor1(b, n))
                    for a, b, n in zip(t.factors, factors, op.grid.sizes))
        out.append((-(t.coupling @ vals), fac))
    return out


def _factor1(f, n):
    return np.ones(n) if f is None else np.asarray(f, dtype=float)


def build_affine_operator(problem, topology, grid: ParametricGrid | None = None):
    """(AffineOperator, SeparatedLoad) of ``problem`` on one subdomain topology."""
    return problem.affine_system(topology, grid)
