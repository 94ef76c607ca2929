"""High-order quadrilateral surface meshes.

Data model for order-p elements with tensor-product Chebyshev nodes,
built-in generators (cubed sphere, cube, torus with optional cross-section
profiles), a plain-text file format, edge connectivity by node
coincidence, and balanced merge-tree construction over the element
adjacency graph.

Element nodes are stored in the column-wise linear ordering of the
spectral module: node (i, j) with i the eta index and j the xi index sits
at linear position k = j*(p+1) + i. The four sides are tagged

    south: i = 0,  east: j = p,  north: i = p,  west: j = 0,

and each side's nodes are enumerated ascending in its parameter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .exceptions import (
    AmbiguousMeshError,
    InvalidOrderError,
    MeshError,
    MeshParseError,
    MultipleComponentsError,
    NonconformingMeshError,
)
from .spectral import cheb2_nodes

SOUTH, EAST, NORTH, WEST = 0, 1, 2, 3
SIDE_NAMES = ("south", "east", "north", "west")


def side_indices(p: int, side: int) -> np.ndarray:
    """Linear indices of a side's p+1 nodes, ascending in the side parameter."""
    j = np.arange(p + 1)
    if side == SOUTH:
        return j * (p + 1)
    if side == EAST:
        return p * (p + 1) + j
    if side == NORTH:
        return j * (p + 1) + p
    if side == WEST:
        return j.copy()
    raise ValueError(f"invalid side {side}")


@dataclass(frozen=True)
class Element:
    """A single order-p quadrilateral element embedded in R^3."""

    id: int
    order: int
    nodes: np.ndarray  # ((p+1)^2, 3), column-wise ordering

    def __post_init__(self):
        n = (self.order + 1) ** 2
        if self.nodes.shape != (n, 3):
            raise MeshError(
                f"element {self.id}: expected {n} nodes for order "
                f"{self.order}, got shape {self.nodes.shape}"
            )

    def side_nodes(self, side: int) -> np.ndarray:
        return self.nodes[side_indices(self.order, side)]


@dataclass(frozen=True)
class EdgeRef:
    """Reference to one side of one element.

    ``reversed`` marks that this side's node sequence runs opposite to its
    interface partner; it is only ever set on the second edge of a pair.
    """

    element: int
    side: int
    reversed: bool = False


@dataclass
class SurfaceMesh:
    """A conforming collection of elements with edge connectivity."""

    elements: list[Element]
    interfaces: list[tuple[EdgeRef, EdgeRef]]
    boundary_edges: list[EdgeRef]
    gen_info: dict | None = None
    _edge_map: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for a, b in self.interfaces:
            self._edge_map[(a.element, a.side)] = (b.element, b.side, b.reversed, False)
            self._edge_map[(b.element, b.side)] = (a.element, a.side, b.reversed, True)

    @property
    def order(self) -> int:
        return self.elements[0].order

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def closed(self) -> bool:
        return not self.boundary_edges

    def partner(self, element: int, side: int):
        """(mate_element, mate_side, pair_reversed, am_second) or None."""
        return self._edge_map.get((element, side))

    def bbox_diagonal(self) -> float:
        lo = np.min([e.nodes.min(axis=0) for e in self.elements], axis=0)
        hi = np.max([e.nodes.max(axis=0) for e in self.elements], axis=0)
        return float(np.linalg.norm(hi - lo))

    def adjacency(self) -> list[set[int]]:
        """Element adjacency sets induced by the interfaces."""
        adj = [set() for _ in self.elements]
        for a, b in self.interfaces:
            adj[a.element].add(b.element)
            adj[b.element].add(a.element)
        return adj


def _check_uniform_order(elements) -> int:
    orders = {e.order for e in elements}
    if len(orders) != 1:
        raise MeshError(f"mixed element orders are not supported: {sorted(orders)}")
    return orders.pop()


def build_connectivity(elements: list[Element], tol: float | None = None) -> SurfaceMesh:
    """Match element sides by pointwise node coincidence.

    Two sides form an interface when all p+1 node coordinates coincide
    within ``tol`` (default 1e-8 times the bounding-box diagonal), either
    in matching or reversed order. A side matching two or more others is
    ambiguous; sides sharing only some nodes are nonconforming.
    """
    if not elements:
        raise MeshError("cannot build connectivity of an empty element list")
    p = _check_uniform_order(elements)
    if tol is None:
        lo = np.min([e.nodes.min(axis=0) for e in elements], axis=0)
        hi = np.max([e.nodes.max(axis=0) for e in elements], axis=0)
        tol = 1e-8 * float(np.linalg.norm(hi - lo))
    if tol <= 0:
        raise MeshError("matching tolerance must be positive")

    sides = []  # (element, side, coords)
    for e in elements:
        for s in range(4):
            sides.append((e.id, s, e.side_nodes(s)))
    centroids = np.array([c.mean(axis=0) for _, _, c in sides])
    tree = cKDTree(centroids)
    candidates = tree.query_pairs(r=2.0 * tol, output_type="ndarray")

    matches: dict[int, list[tuple[int, bool]]] = {}
    for ia, ib in sorted(map(tuple, candidates)):
        ea, sa, ca = sides[ia]
        eb, sb, cb = sides[ib]
        if ea == eb:
            continue
        fwd = np.abs(ca - cb).max() <= tol
        rev = np.abs(ca - cb[::-1]).max() <= tol
        if fwd or rev:
            matches.setdefault(ia, []).append((ib, not fwd))
            matches.setdefault(ib, []).append((ia, not fwd))
        else:
            near_f = np.linalg.norm(ca - cb, axis=1) <= tol
            near_r = np.linalg.norm(ca - cb[::-1], axis=1) <= tol
            if near_f.any() or near_r.any():
                raise NonconformingMeshError(
                    f"sides ({ea},{SIDE_NAMES[sa]}) and ({eb},{SIDE_NAMES[sb]}) "
                    f"share some but not all nodes within tol={tol:g}"
                )

    interfaces = []
    boundary = []
    seen = set()
    for idx, (e, s, _) in enumerate(sides):
        found = matches.get(idx, [])
        if len(found) > 1:
            raise AmbiguousMeshError(
                f"side ({e},{SIDE_NAMES[s]}) matches {len(found)} other sides"
            )
        if not found:
            boundary.append(EdgeRef(e, s))
            continue
        if idx in seen:
            continue
        jdx, rev = found[0]
        seen.add(idx)
        seen.add(jdx)
        e2, s2, _ = sides[jdx]
        first, second = sorted([(e, s), (e2, s2)])
        interfaces.append(
            (EdgeRef(first[0], first[1]), EdgeRef(second[0], second[1], reversed=rev))
        )
    return SurfaceMesh(list(elements), interfaces, boundary)


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

_EX = np.array([1.0, 0.0, 0.0])
_EY = np.array([0.0, 1.0, 0.0])
_EZ = np.array([0.0, 0.0, 1.0])

# (center, t1, t2) per face, with t1 x t2 pointing out of the cube
_CUBE_FACES = (
    (_EX, _EY, _EZ),    # +x
    (-_EX, _EZ, _EY),   # -x
    (_EY, _EZ, _EX),    # +y
    (-_EY, _EX, _EZ),   # -y
    (_EZ, _EX, _EY),    # +z
    (-_EZ, _EY, _EX),   # -z
)


def cube_face_point(face: int, a, b) -> np.ndarray:
    """Point on face ``face`` of the cube [-1,1]^3 at face coordinates (a, b)."""
    c, t1, t2 = _CUBE_FACES[face]
    a = np.asarray(a)[..., None]
    b = np.asarray(b)[..., None]
    return c + a * t1 + b * t2


def _cell_nodes(p: int, a0: float, a1: float, b0: float, b1: float):
    """Tensor Chebyshev nodes of the cell [a0,a1]x[b0,b1] in column ordering."""
    t = cheb2_nodes(p).nodes
    a = a0 + (a1 - a0) * (t + 1) / 2
    b = b0 + (b1 - b0) * (t + 1) / 2
    A = np.repeat(a, p + 1)          # j (xi) slow
    B = np.tile(b, p + 1)            # i (eta) fast
    return A, B


def _cube_elements(n_ref: int, p: int, project: bool) -> list[Element]:
    if n_ref < 0:
        raise InvalidOrderError(f"refinement level must be >= 0, got {n_ref}")
    if p < 2:
        raise InvalidOrderError(f"surface generators need order >= 2, got {p}")
    n = 2**n_ref
    cuts = np.linspace(-1.0, 1.0, n + 1)
    elements = []
    eid = 0
    for face in range(6):
        for cb in range(n):
            for ca in range(n):
                A, B = _cell_nodes(p, cuts[ca], cuts[ca + 1], cuts[cb], cuts[cb + 1])
                pts = cube_face_point(face, A, B)
                if project:
                    pts = pts / np.linalg.norm(pts, axis=1, keepdims=True)
                elements.append(Element(eid, p, pts))
                eid += 1
    return elements


def generate_cubed_sphere(n_ref: int, p: int) -> SurfaceMesh:
    """Cubed-sphere mesh of the unit sphere with 6*4^n_ref order-p elements."""
    mesh = build_connectivity(_cube_elements(n_ref, p, project=True))
    mesh.gen_info = {"kind": "cubed_sphere", "n_ref": n_ref, "p": p}
    return mesh


def generate_cube(n_ref: int, p: int) -> SurfaceMesh:
    """Surface of the cube [-1,1]^3 with 6*4^n_ref flat order-p elements."""
    mesh = build_connectivity(_cube_elements(n_ref, p, project=False))
    mesh.gen_info = {"kind": "cube", "n_ref": n_ref, "p": p}
    return mesh


def square_cross_section(r: float):
    """Cross-section profile of a square of half-width r.

    Kinks sit at minor angles w in {pi/2, pi, 3pi/2, 2pi}, so meshes with
    n_v divisible by 4 align element boundaries with the sharp edges.
    """

    def profile(u, w):
        d = w - np.pi / 4
        return r / np.maximum(np.abs(np.cos(d)), np.abs(np.sin(d)))

    return profile


def torus_point(R: float, r: float, u, w, twist_profile=None, twist: float = 0.0):
    """Point on the (possibly deformed/twisted) torus at angles (u, w)."""
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    rho = twist_profile(u, w) if twist_profile is not None else np.full_like(w, r)
    ang = w + twist * u
    rad = R + rho * np.cos(ang)
    return np.stack([rad * np.cos(u), rad * np.sin(u), rho * np.sin(ang)], axis=-1)


def generate_torus(
    R: float,
    r: float,
    n_u: int,
    n_v: int,
    p: int,
    twist_profile=None,
    twist: float = 0.0,
) -> SurfaceMesh:
    """Doubly periodic torus mesh with n_u*n_v order-p elements.

    ``twist_profile(u, w)`` optionally gives the cross-section radius at
    major angle u and minor angle w; a constant profile reproduces the
    plain torus of radii (R, r). A nonzero ``twist`` rotates the
    cross-section direction by ``twist`` turns of w per major revolution;
    the seam then closes only when twist * n_v is an integer.
    """
    if not (R > r > 0):
        raise MeshError(f"torus radii must satisfy R > r > 0, got R={R}, r={r}")
    if n_u < 2 or n_v < 2 or n_u % 2 or n_v % 2:
        raise MeshError(f"n_u and n_v must be even and >= 2, got {n_u}, {n_v}")
    if twist != 0.0 and abs(twist * n_v - round(twist * n_v)) > 1e-12:
        raise MeshError(f"twist={twist} requires twist*n_v integral (n_v={n_v})")
    if p < 2:
        raise InvalidOrderError(f"surface generators need order >= 2, got {p}")
    du = 2 * np.pi / n_u
    dw = 2 * np.pi / n_v
    elements = []
    eid = 0
    for iu in range(n_u):
        for iv in range(n_v):
            A, B = _cell_nodes(p, iu * du, (iu + 1) * du, iv * dw, (iv + 1) * dw)
            pts = torus_point(R, r, A, B, twist_profile, twist)
            elements.append(Element(eid, p, pts))
            eid += 1
    mesh = build_connectivity(elements)
    mesh.gen_info = {"kind": "torus", "R": R, "r": r, "n_u": n_u, "n_v": n_v,
                     "p": p, "twist": twist}
    return mesh


# ---------------------------------------------------------------------------
# Parameter charts for generator meshes (used by convergence studies)
# ---------------------------------------------------------------------------


def locate_cube_param(n_ref: int, face: int, a: float, b: float):
    """(element id, xi, eta) of face point (a, b) on a cube-based mesh."""
    n = 2**n_ref
    h = 2.0 / n
    ca = min(int((a + 1.0) / h), n - 1)
    cb = min(int((b + 1.0) / h), n - 1)
    xi = 2.0 * (a - (-1.0 + ca * h)) / h - 1.0
    eta = 2.0 * (b - (-1.0 + cb * h)) / h - 1.0
    eid = (face * n + cb) * n + ca
    return eid, xi, eta


def locate_torus_param(n_u: int, n_v: int, u: float, w: float):
    """(element id, xi, eta) of the torus parameter point (u, w)."""
    u = u % (2 * np.pi)
    w = w % (2 * np.pi)
    du = 2 * np.pi / n_u
    dw = 2 * np.pi / n_v
    iu = min(int(u / du), n_u - 1)
    iv = min(int(w / dw), n_v - 1)
    xi = 2.0 * (u - iu * du) / du - 1.0
    eta = 2.0 * (w - iv * dw) / dw - 1.0
    return iu * n_v + iv, xi, eta


# ---------------------------------------------------------------------------
# File format
# ---------------------------------------------------------------------------


def save_mesh(mesh: SurfaceMesh, path) -> None:
    """Write a mesh in the plain-text SHPS format.

    Header ``SHPS 1 <p> <N>``, then per element a line ``ELEM <id>``
    followed by (p+1)^2 coordinate lines in column-wise ordering. Floats
    are printed with shortest round-trip representation; connectivity is
    never stored and is rebuilt on load.
    """
    p = mesh.order
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"SHPS 1 {p} {mesh.n_elements}\n")
        for e in mesh.elements:
            fh.write(f"ELEM {e.id}\n")
            for x, y, z in e.nodes:
                fh.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")


def load_mesh(path, tol: float | None = None) -> SurfaceMesh:
    """Read a mesh written by :func:`save_mesh` and rebuild connectivity."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise MeshParseError("empty mesh file", line=1)
    head = lines[0].split()
    if len(head) != 4 or head[0] != "SHPS":
        raise MeshParseError(f"bad header {lines[0]!r}", line=1)
    if head[1] != "1":
        raise MeshParseError(f"unsupported format version {head[1]}", line=1)
    try:
        p = int(head[2])
        n_elem = int(head[3])
    except ValueError:
        raise MeshParseError(f"non-integer order/count in header {lines[0]!r}", line=1)
    if p < 1 or n_elem < 1:
        raise MeshParseError("order and element count must be positive", line=1)

    n_nodes = (p + 1) ** 2
    elements = []
    ln = 1
    for k in range(n_elem):
        if ln >= len(lines):
            raise MeshParseError(f"expected {n_elem} elements, found {k}", line=ln)
        tag = lines[ln].split()
        if len(tag) != 2 or tag[0] != "ELEM":
            raise MeshParseError(f"expected 'ELEM <id>', got {lines[ln]!r}", line=ln + 1)
        eid = tag[1]
        ln += 1
        rows = []
        while ln < len(lines) and not lines[ln].startswith("ELEM"):
            parts = lines[ln].split()
            if len(parts) != 3:
                raise MeshParseError(
                    f"expected 3 coordinates, got {lines[ln]!r}",
                    line=ln + 1, element=eid,
                )
            try:
                rows.append([float(v) for v in parts])
            except ValueError:
                raise MeshParseError(
                    f"bad float in {lines[ln]!r}", line=ln + 1, element=eid
                )
            ln += 1
        if len(rows) != n_nodes:
            raise MeshParseError(
                f"expected {n_nodes} nodes, found {len(rows)}", element=eid
            )
        elements.append(Element(k, p, np.array(rows)))
    if ln != len(lines):
        raise MeshParseError("trailing data after last element", line=ln + 1)
    return build_connectivity(elements, tol=tol)


# ---------------------------------------------------------------------------
# Merge tree
# ---------------------------------------------------------------------------


@dataclass
class MergeTree:
    """Level-ordered pairwise merge hierarchy over mesh elements.

    Leaf clusters carry ids 0..N-1 (the element ids); internal clusters
    are numbered N, N+1, ... in construction order. ``levels[l]`` lists
    the (alpha, beta) cluster pairs merged at level l; clusters absent
    from a level pass through unchanged.
    """

    levels: list[list[tuple[int, int]]]
    children: dict[int, tuple[int, int]]
    cluster_elements: dict[int, tuple[int, ...]]
    root: int

    @property
    def depth(self) -> int:
        return len(self.levels)

    def clusters_at_level(self, level: int) -> list[int]:
        """Cluster ids alive after applying merges of levels < level."""
        alive = set(range(len([c for c in self.cluster_elements if self.children.get(c) is None])))
        alive = {c for c, ch in self.children.items() if ch is None}
        for lv in self.levels[:level]:
            for a, b in lv:
                parent = self._parent_of(a, b)
                alive.discard(a)
                alive.discard(b)
                alive.add(parent)
        return sorted(alive)

    def _parent_of(self, a: int, b: int) -> int:
        for c, ch in self.children.items():
            if ch == (a, b):
                return c
        raise KeyError((a, b))


def _bfs_order(start: int, members: set[int], adj) -> list[int]:
    seen = {start}
    order = [start]
    queue = [start]
    while queue:
        v = queue.pop(0)
        for w in sorted(adj[v]):
            if w in members and w not in seen:
                seen.add(w)
                order.append(w)
                queue.append(w)
    return order


def _connected(members: set[int], adj) -> bool:
    if not members:
        return True
    start = min(members)
    return len(_bfs_order(start, members, adj)) == len(members)


def _components(members: set[int], adj) -> list[set[int]]:
    rest = set(members)
    comps = []
    while rest:
        comp = set(_bfs_order(min(rest), rest, adj))
        comps.append(comp)
        rest -= comp
    return comps


def _bisect(members: set[int], adj) -> tuple[set[int], set[int]]:
    """Split a connected cluster into two connected, balanced halves.

    BFS region growing from a pseudo-peripheral seed, followed by a
    connectivity repair of the remainder and greedy boundary moves toward
    exact balance. Deterministic: all ties break by lowest element id.
    """
    n = len(members)
    target = n // 2
    # pseudo-peripheral seed via double BFS
    far = _bfs_order(min(members), members, adj)[-1]
    order = _bfs_order(far, members, adj)
    A = set(order[:target])
    B = members - A

    comps = sorted(_components(B, adj), key=lambda c: (-len(c), min(c)))
    B = comps[0]
    for comp in comps[1:]:
        A |= comp

    # Move boundary vertices from A to B until balanced, keeping both
    # halves connected.
    while len(A) > target:
        moved = False
        for v in sorted(A):
            if not (adj[v] & B):
                continue
            if _connected(A - {v}, adj):
                A.remove(v)
                B.add(v)
                moved = True
                break
        if not moved:
            break
    return A, B


def build_merge_tree(mesh: SurfaceMesh) -> MergeTree:
    """Balanced binary merge hierarchy via recursive edge-graph bisection.

    Every pair merges two edge-adjacent, disjoint clusters, and the depth
    stays within ceil(log2 N) + 2 for connected meshes.
    """
    adj = mesh.adjacency()
    n = mesh.n_elements
    members = set(range(n))
    if not _connected(members, adj):
        comps = _components(members, adj)
        raise MultipleComponentsError(
            f"element adjacency graph has {len(comps)} components"
        )

    children: dict[int, tuple[int, int] | None] = {i: None for i in range(n)}
    cluster_elements: dict[int, tuple[int, ...]] = {i: (i,) for i in range(n)}
    heights: dict[int, int] = {i: 0 for i in range(n)}
    next_id = n

    def recurse(cluster: set[int]) -> int:
        nonlocal next_id
        if len(cluster) == 1:
            return next(iter(cluster))
        A, B = _bisect(cluster, adj)
        ca = recurse(A)
        cb = recurse(B)
        if min(cluster_elements[cb]) < min(cluster_elements[ca]):
            ca, cb = cb, ca
        cid = next_id
        next_id += 1
        children[cid] = (ca, cb)
        cluster_elements[cid] = tuple(sorted(cluster_elements[ca] + cluster_elements[cb]))
        heights[cid] = 1 + max(heights[ca], heights[cb])
        return cid

    root = recurse(members)
    depth = heights[root]
    levels: list[list[tuple[int, int]]] = [[] for _ in range(depth)]
    for cid, ch in children.items():
        if ch is not None:
            levels[heights[cid] - 1].append(ch)
    for lv in levels:
        lv.sort(key=lambda ab: min(cluster_elements[ab[0]]))
    return MergeTree(levels, {c: ch for c, ch in children.items()}, cluster_elements, root)
