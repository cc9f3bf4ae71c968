"""The three benchmark problems: parametric Poisson on a rectangle split in two,
the Graetz convection-diffusion channel with a parametrized length, and the
nine-subdomain thermal cross assembled from four reference subdomains.

A benchmark is a set of reference problems (mesh, interfaces, separated data)
and a list of subdomain instances placing a reference problem in physical
space through a geometry map and a choice of parameter slots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import fem
from .fem import AffineOperator, AffineTerm, CoefficientField, SeparatedLoad
from .mesh import (DIRICHLET, INFLOW, NEUMANN, GeometryMap, QuadMesh, SubdomainTopology,
                   apply_geometry_map, build_cross_mesh, build_rect_mesh, geometric_coords,
                   interface_tag, link_neighbors, ratio_coords, tagged_interface, uniform_coords,
                   union_mesh)
from .pgd import GridDim, ParametricGrid

# factor functions map a vector of parameter values to factor values
Factor = Callable[[np.ndarray], np.ndarray] | None


@dataclass(frozen=True, eq=False)
class ReferenceProblem:
    """One local problem on a reference mesh.

    ``matrices``/``loads``/``lifts`` return full nodal objects paired with one
    factor function (or None) per local parameter. ``assemble_physical`` is an
    independent single assembly at a given local parameter on a physical
    mesh (volume terms only) and serves as the oracle for the affine form.
    """

    name: str
    topology: SubdomainTopology
    grid: ParametricGrid
    matrices: Callable[[QuadMesh], list]
    loads: Callable[[QuadMesh], list]
    lifts: Callable[[QuadMesh], list]
    assemble_physical: Callable[[QuadMesh, Sequence[float]], tuple]
    dirichlet_values: Callable[[QuadMesh, Sequence[float]], np.ndarray]
    neumann: Mapping[str, float] = field(default_factory=dict)
    geometry: GeometryMap = GeometryMap()

    @property
    def mesh(self) -> QuadMesh:
        return self.topology.mesh

    @property
    def constrained(self) -> np.ndarray:
        return np.union1d(self.topology.dirichlet_nodes, self.topology.interface_nodes).astype(np.int64)

    def affine_system(self, topology: SubdomainTopology | None = None, grid: ParametricGrid | None = None):
        """(AffineOperator, SeparatedLoad, lift terms) tabulated on the local grid."""
        grid = grid or self.grid
        mesh = self.mesh
        cons = self.constrained
        free = fem.free_dofs(mesh.n_nodes, cons)
        tab = lambda facs: tuple(None if f is None else np.asarray(f(grid.points(k)), dtype=float)
                                 * np.ones(grid.sizes[k]) for k, f in enumerate(facs))
        terms = []
        for label, A, facs in self.matrices(mesh):
            K, B = fem.split(A, cons)
            terms.append(AffineTerm(K, B, tab(facs), label))
        op = AffineOperator(mesh.n_nodes, free, cons, grid, tuple(terms))
        load_terms = [(vec[free], tab(facs)) for vec, facs in self.loads(mesh) if np.any(vec[free])]
        lifts = [(nodal, tab(facs)) for nodal, facs in self.lifts(mesh)]
        for nodal, facs in lifts:
            load_terms += fem.lifted_load(op, nodal, facs)
        return op, SeparatedLoad(len(free), grid, tuple(load_terms)), lifts

    def physical_mesh(self, geometry: GeometryMap, mu_local: Sequence[float]) -> QuadMesh:
        mesh = apply_geometry_map(self.geometry, self.mesh, mu_local)
        return apply_geometry_map(geometry, mesh, ())


@dataclass(frozen=True)
class SubdomainInstance:
    index: int
    reference: str
    geometry: GeometryMap = GeometryMap()
    param_slots: tuple[int, ...] = (0,)
    fixed_interfaces: Mapping[str, float] = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class Benchmark:
    id: str
    references: Mapping[str, ReferenceProblem]
    instances: tuple[SubdomainInstance, ...]
    grid: ParametricGrid
    exact: Callable | None = None
    queries: tuple[tuple[float, ...], ...] = ()
    meta: Mapping[str, object] = field(default_factory=dict)

    def reference_of(self, i: int) -> ReferenceProblem:
        return self.references[self.instances[i].reference]

    def local_mu(self, i: int, mu: Sequence[float]) -> tuple[float, ...]:
        self.grid.locate(mu)
        return tuple(float(mu[s]) for s in self.instances[i].param_slots)

    def physical_mesh(self, i: int, mu: Sequence[float]) -> QuadMesh:
        inst = self.instances[i]
        return self.reference_of(i).physical_mesh(inst.geometry, self.local_mu(i, mu))

    def topologies(self, mu: Sequence[float]) -> list[SubdomainTopology]:
        """Physical topologies with neighbor links resolved at ``mu``."""
        tops = []
        for i, inst in enumerate(self.instances):
            ref = self.reference_of(i).topology
            tops.append(SubdomainTopology(i, self.physical_mesh(i, mu), ref.interfaces, ref.dirichlet_nodes))
        skip = {i: tuple(inst.fixed_interfaces) for i, inst in enumerate(self.instances)}
        return link_neighbors(tops, skip)

    def global_mesh(self, mu: Sequence[float]):
        return union_mesh([self.physical_mesh(i, mu) for i in range(len(self.instances))])

    def local_dirichlet(self, i: int, mu: Sequence[float], mesh: QuadMesh | None = None):
        """(constrained nodes, values) of the external Dirichlet data of instance ``i``,
        including its fixed interfaces."""
        inst = self.instances[i]
        ref = self.reference_of(i)
        mesh = mesh or self.physical_mesh(i, mu)
        vals = ref.dirichlet_values(mesh, self.local_mu(i, mu))
        nodes = [ref.topology.dirichlet_nodes]
        for name, v in inst.fixed_interfaces.items():
            d = ref.topology.interface(name).dof_indices
            vals[d] = v
            nodes.append(d)
        nodes = np.unique(np.concatenate(nodes)).astype(np.int64)
        return nodes, vals[nodes]


# ---------------------------------------------------------------- helpers

def _topology(mesh: QuadMesh, names: Sequence[str]) -> SubdomainTopology:
    ifaces = tuple(tagged_interface(mesh, n) for n in names)
    return SubdomainTopology(0, mesh, ifaces, mesh.nodes_with_tag(DIRICHLET))


# ---------------------------------------------------------------- Poisson

def poisson_exact(x, y, mu):
    return np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y) + 0.5 * mu * x * y * (y - 1) * (x - 2)


def _poisson_f_parts(x, y):
    s2x, s2y, c2x = np.sin(2 * np.pi * x), np.sin(2 * np.pi * y), np.cos(2 * np.pi * x)
    f0 = 8 * np.pi**2 * s2x * s2y
    f1 = 2 * np.pi * (4 * np.pi * x * s2x - c2x) * s2y - x * (x - 2) - y * (y - 1)
    f2 = y * (y - 1) * (1 - 2 * x) - x**2 * (x - 2)
    return f0, f1, f2


def poisson_source(x, y, mu):
    f0, f1, f2 = _poisson_f_parts(x, y)
    return f0 + mu * f1 + mu**2 * f2


def poisson_2d(h: float = 0.05, overlap_cells: int = 1, mu_range=(1.0, 50.0), h_mu: float = 1e-3,
               length: float = 2.0) -> Benchmark:
    """-div((1 + mu x) grad u) = f on (0, 2) x (0, 1), u = 0 on the boundary,
    split at x = 1 with an overlap of 2 * overlap_cells * h."""
    mid = 0.5 * length
    delta = overlap_cells * h
    grid = ParametricGrid((GridDim.from_spacing("mu", *mu_range, h_mu),))
    ys = uniform_coords(0.0, 1.0, h)

    def matrices(mesh):
        return [("nu_1", fem.diffusion_matrix(mesh, 1.0), (None,)),
                ("nu_x", fem.diffusion_matrix(mesh, lambda x, y: x), (lambda m: m,))]

    def loads(mesh):
        parts = [fem.load_vector(mesh, (lambda k: lambda x, y: _poisson_f_parts(x, y)[k])(k)) for k in range(3)]
        return [(parts[0], (None,)), (parts[1], (lambda m: m,)), (parts[2], (lambda m: m**2,))]

    def physical(mesh, mu):
        m = mu[0]
        A = fem.diffusion_matrix(mesh, lambda x, y: 1.0 + m * x)
        return A, fem.load_vector(mesh, lambda x, y: poisson_source(x, y, m))

    def zero_dirichlet(mesh, mu):
        return np.zeros(mesh.n_nodes)

    refs = {}
    for name, (lo, hi), side in (("omega1", (0.0, mid + delta), "right"), ("omega2", (mid - delta, length), "left")):
        rules = {"*": DIRICHLET, side: interface_tag(side)}
        mesh = build_rect_mesh((lo, hi), (0.0, 1.0), uniform_coords(lo, hi, h), ys, rules)
        refs[name] = ReferenceProblem(name, _topology(mesh, [side]), grid, matrices, loads, lambda m: [],
                                      physical, zero_dirichlet)
    insts = (SubdomainInstance(0, "omega1"), SubdomainInstance(1, "omega2"))
    return Benchmark("poisson_2d", refs, insts, grid, exact=poisson_exact, queries=((3.0,), (30.0,)),
                     meta={"h": h, "overlap_cells": overlap_cells})


# ---------------------------------------------------------------- Graetz

def graetz_velocity(x, y):
    return 4.0 * y * (1.0 - y), np.zeros_like(y)


def graetz_default_grading() -> dict:
    y = ratio_coords(0.0, 1.0, 20, 1.2, "both")
    x1 = np.concatenate([geometric_coords(0.0, 1.0, 22, 0.01, "hi"), uniform_coords(1.0, 1.05, 0.01)[1:]])
    x2 = np.concatenate([uniform_coords(0.0, 0.05, 0.01), geometric_coords(0.05, 1.0, 75, 0.01, "lo")[1:]])
    return {"y": y, "x1": x1, "x2": x2}


def graetz(grading: Mapping[str, Sequence[float]] | None = None, hbar: float = 0.05,
           mu1_range=(1e4, 2e4), h_mu1: float = 0.1, mu2_range=(0.5, 4.0), h_mu2: float = 1e-3,
           stabilization: bool = True) -> Benchmark:
    """Graetz channel: nu = 1/mu1, a = (4y(1-y), 0), u = 0 on the inlet and the
    walls for x < 1, u = 1 on the walls for x >= 1, free outflow at x = 1 + mu2.
    Omega_1 = [0, 1 + hbar] x [0, 1]; Omega_2 is the unit square mapped to
    [1, 1 + mu2] x [0, 1] by a piecewise affine stretch with break at hbar."""
    gr = {k: np.asarray(v, dtype=float) for k, v in (grading or graetz_default_grading()).items()}
    d1 = GridDim.from_spacing("mu1", *mu1_range, h_mu1)
    d2 = GridDim.from_spacing("mu2", *mu2_range, h_mu2)
    grid = ParametricGrid((d1, d2))
    gmap = GeometryMap("graetz_stretch", hbar=hbar, param_index=1, interval=tuple(mu2_range))
    inv = lambda m: 1.0 / m
    stretch = lambda m2: (m2 - hbar) / (1.0 - hbar)

    def walls_hot(mesh, mu):
        out = np.zeros(mesh.n_nodes)
        d = mesh.nodes_with_tag(DIRICHLET)
        x, y = mesh.nodes[d, 0], mesh.nodes[d, 1]
        wall = (np.abs(y) < 1e-12) | (np.abs(y - 1) < 1e-12)
        out[d[wall & (x >= 1.0 - 1e-12)]] = 1.0
        return out

    def physical(mesh, mu):
        A = fem.advection_diffusion_matrix(mesh, 1.0 / mu[0], graetz_velocity, stabilization)
        return A, np.zeros(mesh.n_nodes)

    def supg(mesh, mask=None):
        c = _full_convection(mesh, mask, stabilization)
        zero = 0.0 * c["convection"]
        return {"convection": c["convection"], "supg_h": c.get("supg_h", zero), "supg_nu": c.get("supg_nu", zero)}

    # Omega_1: physical coordinates, parameter mu1 only
    m1 = build_rect_mesh((0.0, 1.0 + hbar), (0.0, 1.0), gr["x1"], gr["y"],
                         {"*": DIRICHLET, "right": interface_tag("right")})

    def matrices1(mesh):
        c = supg(mesh)
        out = [("diffusion", fem.diffusion_matrix(mesh) - c["supg_nu"], (inv,)),
               ("convection", c["convection"] + c["supg_h"], (None,))]
        return out

    def walls_hot_ref2(mesh, mu):
        # every wall node of the reference square sits at physical x >= 1
        out = np.zeros(mesh.n_nodes)
        d = mesh.nodes_with_tag(DIRICHLET)
        y = mesh.nodes[d, 1]
        out[d[(np.abs(y) < 1e-12) | (np.abs(y - 1) < 1e-12)]] = 1.0
        return out

    def lifts(ndim, values):
        def build(mesh):
            v = values(mesh, None)
            return [(v, (None,) * ndim)] if np.any(v) else []
        return build

    g1 = ParametricGrid((d1,))
    ref1 = ReferenceProblem("omega1", _topology(m1, ["right"]), g1, matrices1, lambda m: [], lifts(1, walls_hot),
                            physical, walls_hot)

    # Omega_2 on the reference square; the mapped operator keeps the stretch in parametric factors
    m2 = build_rect_mesh((0.0, 1.0), (0.0, 1.0), gr["x2"], gr["y"],
                         {"left": interface_tag("left"), "bottom": DIRICHLET, "top": DIRICHLET, "right": NEUMANN})
    centres = m2.nodes[m2.elements].mean(axis=1)
    near = (centres[:, 0] < hbar).astype(float)
    far = 1.0 - near

    def matrices2(mesh):
        cn = supg(mesh, near)
        cf = supg(mesh, far)
        return [("near", fem.diffusion_matrix(mesh, _mask_field(near))
                 - cn["supg_nu"], (inv, None)),
                ("far_xx", fem.diffusion_matrix(mesh, _mask_field(far), "x") - cf["supg_nu"],
                 (inv, lambda m: 1.0 / stretch(m))),
                ("far_yy", fem.diffusion_matrix(mesh, _mask_field(far), "y"), (inv, stretch)),
                ("convection", cn["convection"] + cf["convection"] + cn["supg_h"] + cf["supg_h"],
                 (None, None))]

    ref2 = ReferenceProblem("omega2", _topology(m2, ["left"]), grid, matrices2, lambda m: [], lifts(2, walls_hot_ref2),
                            physical, walls_hot, geometry=gmap)
    insts = (SubdomainInstance(0, "omega1", param_slots=(0,)), SubdomainInstance(1, "omega2", param_slots=(0, 1)))
    return Benchmark("graetz", {"omega1": ref1, "omega2": ref2}, insts, grid, queries=((1.25e4, 3.0),),
                     meta={"hbar": hbar, "stabilization": stabilization})


def _mask_field(mask: np.ndarray) -> CoefficientField:
    return CoefficientField.region({"0": 0.0, "1": 1.0}, np.where(mask > 0, "1", "0"))


def _full_convection(mesh, mask, stabilization):
    blocks = fem.assemble_convection_supg(mesh, graetz_velocity, None, stabilization, mask)
    return {k: v[0] for k, v in blocks.items()}


# ---------------------------------------------------------------- thermal cross

CROSS_LAYOUT = (
    # reference, translation, rotation
    ("ref1", (0.0, 0.0), math.pi),
    ("ref2", (1.5, 0.0), math.pi),
    ("ref2", (3.0, 0.0), 1.5 * math.pi),
    ("ref2", (0.0, 1.5), 0.5 * math.pi),
    ("ref3", (1.5, 1.5), 0.0),
    ("ref2", (3.0, 1.5), 1.5 * math.pi),
    ("ref4", (0.0, 3.0), 0.0),
    ("ref2", (1.5, 3.0), 0.0),
    ("ref1", (3.0, 3.0), 0.0),
)

# reference-subdomain boundary roles of the four wing tips
CROSS_ROLES = {
    "ref1": {"tip_left": "left", "tip_bottom": "bottom"},
    "ref2": {"tip_left": "left", "tip_bottom": "bottom", "tip_right": "right"},
    "ref3": {"tip_left": "left", "tip_bottom": "bottom", "tip_right": "right", "tip_top": "top"},
    "ref4": {"tip_bottom": "bottom", "tip_right": "right", "tip_top": INFLOW},
}

TABLE_CONDUCTIVITIES = (0.1, 0.2, 0.4, 0.8, 1.6, 3.2, 6.4, 0.1, 0.2)


def thermal_cross(wing_length: float = 0.2625, h_center: float = 0.05, h_wing: float = 0.0125,
                  mu_range=(0.05, 10.0), h_mu: float = 1e-3, inflow: float = 1.0) -> Benchmark:
    """Nine cross-shaped subdomains on a 3 x 3 layout. Conductivity mu_i in the
    central square of subdomain i and 1 in the wings; unit inflow flux on the
    top tip of the top-left subdomain; u = 0 on the bottom tip of the
    bottom-right subdomain; insulated elsewhere."""
    dim = GridDim.from_spacing("mu", *mu_range, h_mu)
    grid1 = ParametricGrid((dim,))
    refs = {}
    for name, roles in CROSS_ROLES.items():
        rules = {"*": NEUMANN}
        names = []
        for tip, role in roles.items():
            if role == INFLOW:
                rules[tip] = INFLOW
            else:
                rules[tip] = interface_tag(role)
                names.append(role)
        names.sort(key=["left", "bottom", "right", "top"].index)
        mesh = build_cross_mesh(wing_length, 1.0, h_center, h_wing, rules)
        centre = (mesh.element_regions == "c").astype(float)
        neumann = {INFLOW: inflow} if INFLOW in roles.values() else {}

        def matrices(mesh, centre=centre):
            return [("centre", fem.diffusion_matrix(mesh, _mask_field(centre)), (lambda m: m,)),
                    ("wings", fem.diffusion_matrix(mesh, _mask_field(1.0 - centre)), (None,))]

        def loads(mesh, neumann=neumann):
            return [(fem.load_vector(mesh, 0.0, neumann), (None,))] if neumann else []

        def physical(mesh, mu):
            nu = CoefficientField.region({"c": float(mu[0]), "l": 1.0, "r": 1.0, "b": 1.0, "t": 1.0})
            return fem.diffusion_matrix(mesh, nu), np.zeros(mesh.n_nodes)

        refs[name] = ReferenceProblem(name, _topology(mesh, names), grid1, matrices, loads, lambda m: [],
                                      physical, lambda mesh, mu: np.zeros(mesh.n_nodes), neumann)
    insts = []
    for i, (ref, t, rot) in enumerate(CROSS_LAYOUT):
        fixed = {"right": 0.0} if i == 2 else {}
        insts.append(SubdomainInstance(i, ref, GeometryMap("rigid", angle=rot, translation=t), (i,), fixed))
    grid = ParametricGrid(tuple(GridDim(f"mu{i + 1}", dim.lo, dim.hi, dim.n) for i in range(9)))
    return Benchmark("thermal_cross", refs, tuple(insts), grid, queries=(TABLE_CONDUCTIVITIES,),
                     meta={"wing_length": wing_length})


BENCHMARKS = {"poisson_2d": poisson_2d, "graetz": graetz, "thermal_cross": thermal_cross}
