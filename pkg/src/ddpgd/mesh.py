"""Structured quadrilateral meshes, interfaces and the restriction/extension maps
used by the algebraic overlapping Schwarz method."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree

DIRICHLET = "dirichlet_external"
NEUMANN = "neumann_homogeneous"
INFLOW = "neumann_inflow"
INTERFACE_PREFIX = "interface:"

# Node tag precedence at corners shared by differently tagged edges.
_PRECEDENCE = {DIRICHLET: 0, INFLOW: 2, NEUMANN: 3}

GEOM_TOL = 1e-9


class InvalidGeometryError(ValueError):
    pass


class TopologyError(ValueError):
    pass


class UnsupportedMapError(ValueError):
    pass


def interface_tag(name: str) -> str:
    return INTERFACE_PREFIX + name


def _rank(tag: str) -> int:
    if tag.startswith(INTERFACE_PREFIX):
        return 1
    return _PRECEDENCE.get(tag, 4)


@dataclass(frozen=True, eq=False)
class QuadMesh:
    """Conforming Q1 mesh.

    ``edge_tags`` maps a boundary tag to the (K, 2) array of boundary edges
    carrying it; ``boundary_tags`` is the per-node tag obtained from the edges
    with Dirichlet > interface > inflow > Neumann precedence.
    """

    nodes: np.ndarray
    elements: np.ndarray
    edge_tags: Mapping[str, np.ndarray] = field(default_factory=dict)
    boundary_tags: Mapping[int, str] = field(default_factory=dict)
    element_regions: np.ndarray | None = None
    grading: tuple[np.ndarray, ...] | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    def nodes_with_tag(self, tag: str) -> np.ndarray:
        return np.array(sorted(k for k, v in self.boundary_tags.items() if v == tag), dtype=np.int64)

    def nodes_on_edges(self, tag: str) -> np.ndarray:
        edges = self.edge_tags.get(tag)
        if edges is None or len(edges) == 0:
            return np.zeros(0, dtype=np.int64)
        return np.unique(edges)

    def with_nodes(self, nodes: np.ndarray) -> "QuadMesh":
        return QuadMesh(np.asarray(nodes, dtype=float), self.elements, self.edge_tags,
                        self.boundary_tags, self.element_regions, self.grading)

    def bounding_box(self) -> tuple[float, float, float, float]:
        return (self.nodes[:, 0].min(), self.nodes[:, 0].max(),
                self.nodes[:, 1].min(), self.nodes[:, 1].max())

    def locate(self, points: np.ndarray, tol: float = GEOM_TOL) -> np.ndarray:
        """Node indices coinciding with ``points``; -1 where there is none."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if len(points) == 0:
            return np.zeros(0, dtype=np.int64)
        dist, idx = _tree(self).query(points)
        idx = np.asarray(idx, dtype=np.int64)
        idx[dist > tol] = -1
        return idx


_TREES: dict[int, tuple[object, cKDTree]] = {}


def _tree(mesh: QuadMesh) -> cKDTree:
    hit = _TREES.get(id(mesh))
    if hit is not None and hit[0] is mesh:
        return hit[1]
    tree = cKDTree(mesh.nodes)
    if len(_TREES) > 256:
        _TREES.clear()
    _TREES[id(mesh)] = (mesh, tree)
    return tree


@dataclass(frozen=True)
class InterfaceDofSet:
    name: str
    dof_indices: np.ndarray
    includes_endpoints: bool = True

    def __len__(self) -> int:
        return len(self.dof_indices)


@dataclass(frozen=True)
class NeighborLink:
    """Where the nodes of one of our interfaces sit in the neighbor's mesh."""

    interface: str
    neighbor: int
    neighbor_nodes: np.ndarray


@dataclass(frozen=True, eq=False)
class SubdomainTopology:
    index: int
    mesh: QuadMesh
    interfaces: tuple[InterfaceDofSet, ...]
    dirichlet_nodes: np.ndarray
    neighbor_links: tuple[NeighborLink, ...] = ()

    @property
    def extension_map(self) -> dict[str, np.ndarray]:
        return {s.name: s.dof_indices for s in self.interfaces}

    def interface(self, name: str) -> InterfaceDofSet:
        for s in self.interfaces:
            if s.name == name:
                return s
        raise TopologyError(f"subdomain {self.index} has no interface {name!r}")

    def link(self, name: str) -> NeighborLink:
        for lk in self.neighbor_links:
            if lk.interface == name:
                return lk
        raise TopologyError(f"interface {name!r} of subdomain {self.index} has no neighbor")

    @property
    def interface_nodes(self) -> np.ndarray:
        if not self.interfaces:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([s.dof_indices for s in self.interfaces])

    @property
    def free_nodes(self) -> np.ndarray:
        fixed = np.zeros(self.mesh.n_nodes, dtype=bool)
        fixed[self.dirichlet_nodes] = True
        fixed[self.interface_nodes] = True
        return np.flatnonzero(~fixed)


# ---------------------------------------------------------------- builders

def uniform_coords(lo: float, hi: float, h: float) -> np.ndarray:
    n = (hi - lo) / h
    if abs(n - round(n)) > 1e-9 * max(1.0, n):
        raise InvalidGeometryError(f"mesh size {h} does not divide [{lo}, {hi}]")
    return np.linspace(lo, hi, int(round(n)) + 1)


def ratio_coords(lo: float, hi: float, n: int, ratio: float, toward: str = "lo") -> np.ndarray:
    """``n`` cells with constant growth ``ratio`` away from the refined end."""
    half = n // 2 if toward == "both" else n
    span = (hi - lo) / (2 if toward == "both" else 1)
    first = span * (ratio - 1.0) / (ratio**half - 1.0) if ratio != 1.0 else span / half
    return geometric_coords(lo, hi, n, first, toward)


def geometric_coords(lo: float, hi: float, n: int, first: float, toward: str = "lo") -> np.ndarray:
    """``n`` cells on [lo, hi] growing geometrically away from one end (or both,
    ``toward="both"`` with ``n`` even), the smallest cell having size ``first``."""
    if toward == "both":
        if n % 2:
            raise InvalidGeometryError("symmetric grading needs an even cell count")
        mid = 0.5 * (lo + hi)
        left = geometric_coords(lo, mid, n // 2, first, "lo")
        right = geometric_coords(mid, hi, n // 2, first, "hi")
        return np.concatenate([left, right[1:]])
    length = hi - lo
    if first * n > length + 1e-14:
        raise InvalidGeometryError("first cell too large for a growing grading")
    if abs(first * n - length) < 1e-14:
        sizes = np.full(n, first)
    else:
        # solve first * (r^n - 1) / (r - 1) = length for r > 1
        f = lambda r: first * (r**n - 1.0) / (r - 1.0) - length
        a, b = 1.0 + 1e-12, 2.0
        while f(b) < 0:
            b *= 2.0
        for _ in range(200):
            m = 0.5 * (a + b)
            if f(m) > 0:
                b = m
            else:
                a = m
        r = 0.5 * (a + b)
        sizes = first * r ** np.arange(n)
        sizes *= length / sizes.sum()
    if toward == "hi":
        sizes = sizes[::-1]
    coords = lo + np.concatenate([[0.0], np.cumsum(sizes)])
    coords[-1] = hi
    return coords


def _check_coords(c: np.ndarray, axis: str) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    if c.ndim != 1 or len(c) < 2 or np.any(np.diff(c) <= 0):
        raise InvalidGeometryError(f"{axis}-coordinates must be strictly increasing with >= 2 entries")
    return c


def _tag_nodes(edge_tags: Mapping[str, np.ndarray]) -> dict[int, str]:
    tags: dict[int, str] = {}
    for tag, edges in edge_tags.items():
        for n in np.unique(edges):
            n = int(n)
            old = tags.get(n)
            if old is None or _rank(tag) < _rank(old):
                tags[n] = tag
    return dict(sorted(tags.items()))


def _apply_rules(labelled: Mapping[str, np.ndarray], tag_rules: Mapping[str, str]) -> dict[str, np.ndarray]:
    default = tag_rules.get("*", NEUMANN)
    out: dict[str, list[np.ndarray]] = {}
    for label, edges in labelled.items():
        if len(edges) == 0:
            continue
        tag = tag_rules.get(label, default)
        out.setdefault(tag, []).append(edges)
    return {k: np.vstack(v).astype(np.int64) for k, v in out.items()}


def build_rect_mesh(x_range: Sequence[float], y_range: Sequence[float],
                    x_coords: Sequence[float], y_coords: Sequence[float],
                    tag_rules: Mapping[str, str] | None = None) -> QuadMesh:
    """Tensor-product mesh. Boundary edges are labelled left/right/bottom/top
    and ``tag_rules`` maps those labels (or ``"*"``) to boundary tags."""
    xs = _check_coords(x_coords, "x")
    ys = _check_coords(y_coords, "y")
    for c, r, ax in ((xs, x_range, "x"), (ys, y_range, "y")):
        if abs(c[0] - r[0]) > 1e-12 or abs(c[-1] - r[1]) > 1e-12:
            raise InvalidGeometryError(f"{ax}-coordinates do not span {tuple(r)}")
    nx, ny = len(xs), len(ys)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange(nx * ny).reshape(ny, nx)
    elements = np.column_stack([idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel(),
                                idx[1:, 1:].ravel(), idx[1:, :-1].ravel()])
    labelled = {
        "bottom": np.column_stack([idx[0, :-1], idx[0, 1:]]),
        "right": np.column_stack([idx[:-1, -1], idx[1:, -1]]),
        "top": np.column_stack([idx[-1, 1:], idx[-1, :-1]]),
        "left": np.column_stack([idx[1:, 0], idx[:-1, 0]]),
    }
    edge_tags = _apply_rules(labelled, tag_rules or {"*": DIRICHLET})
    return QuadMesh(nodes, elements, edge_tags, _tag_nodes(edge_tags),
                    np.zeros(len(elements), dtype="<U1"), (xs, ys))


def build_cross_mesh(wing_length: float = 0.2625, side: float = 1.0, h_center: float = 0.05,
                     h_wing: float = 0.0125, tag_rules: Mapping[str, str] | None = None) -> QuadMesh:
    """Square [0, side]^2 with four rectangular wings of depth ``wing_length``.

    The centre block uses ``h_center`` in both directions; each wing keeps
    ``h_center`` along the square side and ``h_wing`` across its depth.
    Element regions: c (centre), l, r, b, t (wings). Boundary edge labels:
    tip_left, tip_right, tip_bottom, tip_top, side.
    """
    if h_center <= 0 or h_wing <= 0 or wing_length < 0:
        raise InvalidGeometryError("mesh sizes must be positive and wing length non-negative")
    c = uniform_coords(0.0, side, h_center)
    blocks = [("c", c, c)]
    if wing_length > 0:
        w = uniform_coords(0.0, wing_length, h_wing)
        blocks += [("l", w - wing_length, c), ("r", side + w, c),
                   ("b", c, w - wing_length), ("t", c, side + w)]

    pts = np.vstack([np.column_stack([g[0].ravel(), g[1].ravel()])
                     for _, xs, ys in blocks for g in [np.meshgrid(xs, ys)]])
    key = np.round(pts / GEOM_TOL).astype(np.int64)
    uniq, inverse = np.unique(key, axis=0, return_inverse=True)
    # deterministic node order: by y then x
    first = np.full(len(uniq), -1)
    first[inverse[::-1]] = np.arange(len(pts))[::-1]
    coords = pts[first]
    order = np.lexsort((coords[:, 0], coords[:, 1]))
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    nodes = coords[order]
    gid = rank[inverse.ravel()]

    elements, regions = [], []
    offset = 0
    for region, xs, ys in blocks:
        nx, ny = len(xs), len(ys)
        idx = gid[offset:offset + nx * ny].reshape(ny, nx)
        offset += nx * ny
        elements.append(np.column_stack([idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel(),
                                         idx[1:, 1:].ravel(), idx[1:, :-1].ravel()]))
        regions += [region] * ((nx - 1) * (ny - 1))
    elements = np.vstack(elements)

    # boundary edges = edges used by exactly one element, oriented as in the element
    local = [(0, 1), (1, 2), (2, 3), (3, 0)]
    all_edges = np.vstack([elements[:, [a, b]] for a, b in local])
    skey = np.sort(all_edges, axis=1)
    _, inv, counts = np.unique(skey, axis=0, return_inverse=True, return_counts=True)
    bnd = all_edges[counts[inv.ravel()] == 1]
    mid = 0.5 * (nodes[bnd[:, 0]] + nodes[bnd[:, 1]])
    horiz = np.abs(nodes[bnd[:, 0], 1] - nodes[bnd[:, 1], 1]) < GEOM_TOL
    lo, hi = -wing_length, side + wing_length
    labels = np.full(len(bnd), "side", dtype=object)
    labels[(~horiz) & (np.abs(mid[:, 0] - lo) < GEOM_TOL)] = "tip_left"
    labels[(~horiz) & (np.abs(mid[:, 0] - hi) < GEOM_TOL)] = "tip_right"
    labels[horiz & (np.abs(mid[:, 1] - lo) < GEOM_TOL)] = "tip_bottom"
    labels[horiz & (np.abs(mid[:, 1] - hi) < GEOM_TOL)] = "tip_top"
    labelled = {lab: bnd[labels == lab] for lab in ("tip_left", "tip_right", "tip_bottom", "tip_top", "side")}
    edge_tags = _apply_rules(labelled, tag_rules or {"*": NEUMANN})
    return QuadMesh(nodes, elements, edge_tags, _tag_nodes(edge_tags), np.array(regions))


def union_mesh(meshes: Sequence[QuadMesh]) -> tuple[QuadMesh, list[np.ndarray], np.ndarray]:
    """Glue meshes that coincide on their overlaps.

    Returns the union mesh (untagged), the per-mesh node maps into it and, for
    every union element, the index of the first mesh that contributed it.
    """
    pts = np.vstack([m.nodes for m in meshes])
    key = np.round(pts / GEOM_TOL).astype(np.int64)
    uniq, first_idx, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.ravel()
    order = np.argsort(first_idx, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    nodes = pts[first_idx[order]]
    maps, off = [], 0
    for m in meshes:
        maps.append(rank[inverse[off:off + m.n_nodes]])
        off += m.n_nodes
    elems, owner, regions, seen = [], [], [], set()
    for i, (m, mp) in enumerate(zip(meshes, maps)):
        for e, conn in enumerate(mp[m.elements]):
            k = tuple(sorted(conn.tolist()))
            if k in seen:
                continue
            seen.add(k)
            elems.append(conn)
            owner.append(i)
            regions.append(m.element_regions[e] if m.element_regions is not None else "")
    mesh = QuadMesh(nodes, np.array(elems, dtype=np.int64), {}, {}, np.array(regions))
    return mesh, maps, np.array(owner)


def retag(mesh: QuadMesh, edge_tags: Mapping[str, np.ndarray]) -> QuadMesh:
    edge_tags = {k: np.asarray(v, dtype=np.int64) for k, v in edge_tags.items() if len(v)}
    return QuadMesh(mesh.nodes, mesh.elements, edge_tags, _tag_nodes(edge_tags),
                    mesh.element_regions, mesh.grading)


def boundary_edges(mesh: QuadMesh) -> np.ndarray:
    local = [(0, 1), (1, 2), (2, 3), (3, 0)]
    all_edges = np.vstack([mesh.elements[:, [a, b]] for a, b in local])
    skey = np.sort(all_edges, axis=1)
    _, inv, counts = np.unique(skey, axis=0, return_inverse=True, return_counts=True)
    return all_edges[counts[inv.ravel()] == 1]


def jacobian_dets_at_vertices(mesh: QuadMesh) -> np.ndarray:
    """(E, 4) determinants of the bilinear map evaluated at the element vertices."""
    X = mesh.nodes[mesh.elements]
    out = np.empty((mesh.n_elements, 4))
    for k in range(4):
        e1 = X[:, (k + 1) % 4] - X[:, k]
        e2 = X[:, (k - 1) % 4] - X[:, k]
        out[:, k] = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    return out


def check_mesh(mesh: QuadMesh) -> None:
    el = mesh.elements
    if el.min() < 0 or el.max() >= mesh.n_nodes:
        raise InvalidGeometryError("element references a missing node")
    if any(len(set(row)) != 4 for row in el.tolist()):
        raise InvalidGeometryError("element with repeated nodes")
    if np.any(jacobian_dets_at_vertices(mesh) <= 0):
        raise InvalidGeometryError("element with non-positive Jacobian")


# ---------------------------------------------------------------- interfaces

def extract_interface(mesh: QuadMesh, segment: Sequence[Sequence[float]], endpoint_rule: str = "auto",
                      name: str = "interface") -> InterfaceDofSet:
    """Nodes of an axis-aligned mesh line, ordered by arclength from ``segment[0]``.

    ``endpoint_rule``: "include", "exclude", or "auto" (drop an endpoint only
    when it carries an external Dirichlet tag).
    """
    p0, p1 = np.asarray(segment[0], dtype=float), np.asarray(segment[1], dtype=float)
    d = p1 - p0
    length = float(np.hypot(*d))
    if length == 0 or (abs(d[0]) > GEOM_TOL and abs(d[1]) > GEOM_TOL):
        raise InvalidGeometryError("interfaces must be non-degenerate axis-aligned segments")
    if np.any(mesh.locate(np.vstack([p0, p1])) < 0):
        raise InvalidGeometryError("segment endpoints are not mesh nodes")
    t = d / length
    rel = mesh.nodes - p0
    s = rel @ t
    off = np.abs(rel[:, 0] * t[1] - rel[:, 1] * t[0])
    on = np.flatnonzero((off < GEOM_TOL) & (s > -GEOM_TOL) & (s < length + GEOM_TOL))
    on = on[np.argsort(s[on])]
    # consecutive nodes must be joined by element edges
    edges = set()
    for a, b in ((0, 1), (1, 2), (2, 3), (3, 0)):
        for u, v in mesh.elements[:, [a, b]].tolist():
            edges.add((min(u, v), max(u, v)))
    for u, v in zip(on[:-1], on[1:]):
        if (min(u, v), max(u, v)) not in edges:
            raise InvalidGeometryError("segment does not follow a mesh line")
    keep = on
    if endpoint_rule == "exclude":
        keep = on[1:-1]
    elif endpoint_rule == "auto":
        ends = {int(on[0]), int(on[-1])}
        keep = np.array([n for n in on if not (n in ends and mesh.boundary_tags.get(int(n)) == DIRICHLET)],
                        dtype=np.int64)
    elif endpoint_rule != "include":
        raise ValueError(f"unknown endpoint rule {endpoint_rule!r}")
    return InterfaceDofSet(name, np.asarray(keep, dtype=np.int64), len(keep) == len(on))


def tagged_interface(mesh: QuadMesh, name: str) -> InterfaceDofSet:
    """Interface from the nodes tagged ``interface:<name>``, ordered along the line."""
    nodes = mesh.nodes_with_tag(interface_tag(name))
    if len(nodes) == 0:
        return InterfaceDofSet(name, nodes, False)
    P = mesh.nodes[nodes]
    span = P.max(axis=0) - P.min(axis=0)
    axis = int(np.argmax(span))
    order = np.argsort(P[:, axis], kind="stable")
    all_on = mesh.nodes_on_edges(interface_tag(name))
    return InterfaceDofSet(name, nodes[order], len(all_on) == len(nodes))


def restrict(field: np.ndarray, mesh: QuadMesh, points: np.ndarray) -> np.ndarray:
    """Values of a nodal ``field`` on ``mesh`` at the nodes coinciding with ``points``."""
    field = np.asarray(field)
    if field.shape[0] != mesh.n_nodes:
        raise ValueError(f"field has {field.shape[0]} entries, mesh has {mesh.n_nodes} nodes")
    idx = mesh.locate(points)
    if np.any(idx < 0):
        raise TopologyError("target interface is not inside the subdomain mesh")
    return field[idx]


def extend(coeffs: np.ndarray, topology: SubdomainTopology, interface: str) -> np.ndarray:
    """Q1 extension of interface nodal values: the lifted nodal vector."""
    dofs = topology.interface(interface).dof_indices
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape[0] != len(dofs):
        raise ValueError(f"expected {len(dofs)} interface values, got {coeffs.shape[0]}")
    out = np.zeros((topology.mesh.n_nodes,) + coeffs.shape[1:])
    out[dofs] = coeffs
    return out


def link_neighbors(topologies: Sequence[SubdomainTopology],
                   skip: Mapping[int, Sequence[str]] | None = None) -> list[SubdomainTopology]:
    """Attach to every interface the neighbor whose mesh contains all its nodes.

    ``skip`` lists, per subdomain index, interfaces that are held fixed and
    need no neighbor.
    """
    skip = skip or {}
    out = []
    for t in topologies:
        links = []
        for s in t.interfaces:
            if s.name in skip.get(t.index, ()):
                continue
            pts = t.mesh.nodes[s.dof_indices]
            for other in topologies:
                if other.index == t.index:
                    continue
                idx = other.mesh.locate(pts)
                if len(idx) and np.all(idx >= 0):
                    links.append(NeighborLink(s.name, other.index, idx))
                    break
            else:
                raise TopologyError(f"interface {s.name!r} of subdomain {t.index} has no neighbor")
        out.append(SubdomainTopology(t.index, t.mesh, t.interfaces, t.dirichlet_nodes, tuple(links)))
    return out


# ---------------------------------------------------------------- geometry maps

@dataclass(frozen=True)
class GeometryMap:
    """identity | rigid (quarter-turn rotation about ``center`` then translation)
    | graetz_stretch (piecewise affine stretch in x with break at ``hbar``)."""

    kind: str = "identity"
    angle: float = 0.0
    translation: tuple[float, float] = (0.0, 0.0)
    center: tuple[float, float] = (0.5, 0.5)
    hbar: float = 0.05
    param_index: int = 1
    interval: tuple[float, float] | None = None

    def transform(self, xy: np.ndarray, mu: Sequence[float] = ()) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        if self.kind == "identity":
            return xy.copy()
        if self.kind == "rigid":
            q = self.angle / (0.5 * math.pi)
            if abs(q - round(q)) > 1e-12:
                raise UnsupportedMapError(f"rotation angle {self.angle} is not a multiple of pi/2")
            k = int(round(q)) % 4
            c = np.asarray(self.center)
            x, y = (xy - c).T
            rot = [(x, y), (-y, x), (-x, -y), (y, -x)][k]
            return np.column_stack(rot) + c + np.asarray(self.translation)
        if self.kind == "graetz_stretch":
            mu2 = float(mu[self.param_index])
            if self.interval is not None and not (self.interval[0] - 1e-12 <= mu2 <= self.interval[1] + 1e-12):
                raise ValueError(f"stretch parameter {mu2} outside {self.interval}")
            if mu2 <= self.hbar:
                raise InvalidGeometryError("stretch parameter must exceed the break point")
            xh, yh = xy.T
            hb = self.hbar
            far = (1.0 - hb * xh) / (1.0 - hb) + mu2 * (xh - hb) / (1.0 - hb)
            x = np.where(xh <= hb, 1.0 + xh, far)
            return np.column_stack([x, yh])
        raise UnsupportedMapError(f"unknown geometry map {self.kind!r}")

    def stretch(self, mu: Sequence[float]) -> float:
        """x-Jacobian of the stretched part (graetz_stretch only)."""
        mu2 = float(mu[self.param_index])
        return (mu2 - self.hbar) / (1.0 - self.hbar)


def apply_geometry_map(gmap: GeometryMap, mesh: QuadMesh, mu: Sequence[float] = ()) -> QuadMesh:
    return mesh.with_nodes(gmap.transform(mesh.nodes, mu))


def write_mesh_text(mesh: QuadMesh, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"# nodes {mesh.n_nodes}\n")
        for i, (x, y) in enumerate(mesh.nodes):
            fh.write(f"{i} {x:.17g} {y:.17g}\n")
        fh.write(f"# elements {mesh.n_elements}\n")
        for i, conn in enumerate(mesh.elements):
            fh.write(f"{i} {' '.join(str(int(c)) for c in conn)}\n")
