"""Per-element geometric quantities and discrete surface operators.

For each element this module builds the metric tensor and its inverse
quantities, the tangential differentiation matrices D_x, D_y, D_z in the
ambient Cartesian directions, the dense operator matrix of a general
variable-coefficient second-order operator

    sum_{i<=j} a_ij d_i d_j + sum_i b_i d_i + c,

and the outward binormal derivative operator mapping element samples to
flux values on the corner-free boundary grid (first-kind nodes of degree
p-2 per side). Everything is pure per-element computation.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .exceptions import CoefficientEvaluationError, DegenerateElementError
from .mesh import EAST, NORTH, SOUTH, WEST, Element, SurfaceMesh, side_indices
from .spectral import (
    cc_weights,
    cheb1_nodes,
    cheb2_nodes,
    fejer1_weights,
    interp_matrix,
    tensor_diff,
)

# Sides in boundary ordering; each side's nodes ascend in its parameter.
_SIDES = (SOUTH, EAST, NORTH, WEST)


@dataclass(frozen=True)
class ReferenceOps:
    """Order-p reference-square operators shared by all elements.

    Boundary bookkeeping follows the corner-free convention: boundary
    operators act on 4(p-1) first-kind nodes of degree p-2 per side, and
    the interpolation matrices E (first-kind -> second-kind side values)
    and R (second-kind side values -> first-kind) translate between the
    grids. Corner values of prolonged boundary data are the average of
    the two adjacent sides' interpolants.
    """

    p: int
    D: np.ndarray
    D_xi: np.ndarray
    D_eta: np.ndarray
    w1: np.ndarray            # Clenshaw-Curtis weights, p+1
    w2: np.ndarray            # tensor quadrature weights, (p+1)^2
    w_edge: np.ndarray        # first-kind edge weights, p-1
    R: np.ndarray             # (p-1) x (p+1)
    E: np.ndarray             # (p+1) x (p-1)
    side_idx: tuple           # 4 arrays of p+1 linear indices
    J_int: np.ndarray         # interior linear indices, (p-1)^2
    J_bnd: np.ndarray         # non-corner boundary indices, 4(p-1), side-major
    J_corner: np.ndarray      # [SW, SE, NE, NW]
    E_bnd: np.ndarray         # 4(p-1) x 4(p-1), block-diagonal prolongation
    E_corner: np.ndarray      # 4 x 4(p-1), corner averaging rows

    @property
    def n_bnd(self) -> int:
        return 4 * (self.p - 1)

    def prolong_full(self, n_rows: int | None = None) -> np.ndarray:
        """Map first-kind boundary data to all second-kind boundary values."""
        p = self.p
        P = np.zeros(((p + 1) ** 2, 4 * (p - 1)))
        P[self.J_bnd] = self.E_bnd
        P[self.J_corner] = self.E_corner
        return P


@lru_cache(maxsize=None)
def get_reference_ops(p: int) -> ReferenceOps:
    if p < 2:
        raise DegenerateElementError(f"surface elements need order >= 2, got {p}")
    grid2 = cheb2_nodes(p)
    grid1 = cheb1_nodes(p - 2)
    from .spectral import diff_matrix

    D = diff_matrix(p)
    D_xi, D_eta = tensor_diff(p)
    w1 = cc_weights(p)
    w2 = np.kron(w1, w1)
    w_edge = fejer1_weights(p - 2)
    R = interp_matrix(grid2, grid1)
    E = interp_matrix(grid1, grid2)

    sides = tuple(side_indices(p, s) for s in _SIDES)
    ii = np.arange(1, p)
    J_int = (np.repeat(ii, p - 1) * (p + 1) + np.tile(ii, p - 1))
    J_bnd = np.concatenate([sides[s][1:p] for s in _SIDES])
    # corners in the order SW, SE, NE, NW
    J_corner = np.array([0, p * (p + 1), p * (p + 1) + p, p])

    m = p - 1
    E_bnd = np.zeros((4 * m, 4 * m))
    for s in range(4):
        E_bnd[s * m:(s + 1) * m, s * m:(s + 1) * m] = E[1:p]
    # Each corner value is taken from exactly one adjacent side's edge-grid
    # interpolant (the lower side tag wins), so the boundary rows of a
    # solution operator are precisely the per-side interpolation matrices.
    corner_owner = (
        (SOUTH, 0),   # SW
        (SOUTH, p),   # SE
        (EAST, p),    # NE
        (NORTH, 0),   # NW
    )
    E_corner = np.zeros((4, 4 * m))
    for ci, (s, row) in enumerate(corner_owner):
        E_corner[ci, s * m:(s + 1) * m] = E[row]

    return ReferenceOps(
        p=p, D=D, D_xi=D_xi, D_eta=D_eta, w1=w1, w2=w2, w_edge=w_edge,
        R=R, E=E, side_idx=sides, J_int=J_int, J_bnd=J_bnd,
        J_corner=J_corner, E_bnd=E_bnd, E_corner=E_corner,
    )


@dataclass(frozen=True)
class MetricData:
    """Pointwise metric quantities of one element."""

    x_u: np.ndarray       # (n, 3) tangent d x / d xi
    x_v: np.ndarray       # (n, 3) tangent d x / d eta
    g: np.ndarray         # (n, 3): g_uu, g_uv, g_vv
    det_g: np.ndarray     # (n,)
    inv_g: np.ndarray     # (n, 3): g^uu, g^uv, g^vv
    xi_x: np.ndarray      # (n, 3)
    eta_x: np.ndarray     # (n, 3)
    normal: np.ndarray    # (n, 3), unit
    sqrt_det: np.ndarray  # (n,)


def compute_metric(element: Element, ref: ReferenceOps | None = None) -> MetricData:
    """Metric tensor, inverse metric quantities, and unit normal of an element."""
    ref = ref or get_reference_ops(element.order)
    x = element.nodes
    x_u = ref.D_xi @ x
    x_v = ref.D_eta @ x
    g_uu = np.einsum("ij,ij->i", x_u, x_u)
    g_uv = np.einsum("ij,ij->i", x_u, x_v)
    g_vv = np.einsum("ij,ij->i", x_v, x_v)
    det = g_uu * g_vv - g_uv**2
    floor = 1e-13 * float(np.median(det))
    bad = np.where((det <= floor) | (det <= 0.0))[0]
    if bad.size:
        k = int(bad[0])
        raise DegenerateElementError(
            f"element {element.id}: degenerate metric (det g = {det[k]:.3e}) "
            f"at node {k}"
        )
    inv = np.stack([g_vv / det, -g_uv / det, g_uu / det], axis=1)
    xi_x = inv[:, 0:1] * x_u + inv[:, 1:2] * x_v
    eta_x = inv[:, 1:2] * x_u + inv[:, 2:3] * x_v
    nrm = np.cross(x_u, x_v)
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    return MetricData(
        x_u=x_u, x_v=x_v, g=np.stack([g_uu, g_uv, g_vv], axis=1),
        det_g=det, inv_g=inv, xi_x=xi_x, eta_x=eta_x, normal=nrm,
        sqrt_det=np.sqrt(det),
    )


def surface_diff_matrices(
    element: Element,
    ref: ReferenceOps | None = None,
    metric: MetricData | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Tangential differentiation matrices D_x, D_y, D_z on one element."""
    ref = ref or get_reference_ops(element.order)
    metric = metric or compute_metric(element, ref)
    mats = []
    for c in range(3):
        mats.append(metric.xi_x[:, c:c + 1] * ref.D_xi
                    + metric.eta_x[:, c:c + 1] * ref.D_eta)
    return tuple(mats)


def _interp_side(ref: ReferenceOps, values: np.ndarray, side: int) -> np.ndarray:
    """Restrict nodal values to one side and reinterpolate to its edge grid."""
    return ref.R @ values[ref.side_idx[side]]


@dataclass(frozen=True)
class BoundaryGeometry:
    """Edge-grid geometry of one element: 4(p-1) corner-free boundary nodes."""

    coords: np.ndarray    # (4(p-1), 3)
    binormal: np.ndarray  # (4(p-1), 3) outward unit binormal
    arc_jac: np.ndarray   # (4(p-1),) |dx/dt| along the side parameter


def boundary_geometry(element: Element, ref: ReferenceOps,
                      metric: MetricData) -> BoundaryGeometry:
    p = ref.p
    coords = np.empty((4 * (p - 1), 3))
    binorm = np.empty_like(coords)
    jac = np.empty(4 * (p - 1))
    m = p - 1
    for si, side in enumerate(_SIDES):
        sl = slice(si * m, (si + 1) * m)
        coords[sl] = _interp_side(ref, element.nodes, side)
        xu = _interp_side(ref, metric.x_u, side)
        xv = _interp_side(ref, metric.x_v, side)
        nrm = np.cross(xu, xv)
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
        tangent = xu if side in (SOUTH, NORTH) else xv
        # outward for any nondegenerate parametrization: the scalar triple
        # products below reduce to +|x_u x x_v| on every side
        if side == SOUTH:
            nb = np.cross(xu, nrm)
        elif side == EAST:
            nb = np.cross(xv, nrm)
        elif side == NORTH:
            nb = np.cross(nrm, xu)
        else:
            nb = np.cross(nrm, xv)
        nb /= np.linalg.norm(nb, axis=1, keepdims=True)
        binorm[sl] = nb
        jac[sl] = np.linalg.norm(tangent, axis=1)
    return BoundaryGeometry(coords=coords, binormal=binorm, arc_jac=jac)


def binormal_operator(
    element: Element,
    ref: ReferenceOps | None = None,
    metric: MetricData | None = None,
    diff_mats: tuple | None = None,
    geometry: BoundaryGeometry | None = None,
) -> np.ndarray:
    """Outward binormal derivative operator on the corner-free boundary grid.

    Each row combines the reinterpolated rows of D_x, D_y, D_z with the
    Cartesian components of the outward unit binormal at that edge node.
    """
    ref = ref or get_reference_ops(element.order)
    metric = metric or compute_metric(element, ref)
    diff_mats = diff_mats or surface_diff_matrices(element, ref, metric)
    geometry = geometry or boundary_geometry(element, ref, metric)
    p = ref.p
    m = p - 1
    D_bn = np.zeros((4 * m, (p + 1) ** 2))
    for si, side in enumerate(_SIDES):
        sl = slice(si * m, (si + 1) * m)
        rows = np.zeros((m, (p + 1) ** 2))
        for c in range(3):
            rows += geometry.binormal[sl, c:c + 1] * (
                ref.R @ diff_mats[c][ref.side_idx[side]]
            )
        D_bn[sl] = rows
    return D_bn


# ---------------------------------------------------------------------------
# Coefficient fields and operator assembly
# ---------------------------------------------------------------------------

_A_KEYS = ("a11", "a22", "a33", "a12", "a23", "a13")
_B_KEYS = ("b1", "b2", "b3")


@dataclass(frozen=True)
class CoefficientField:
    """Coefficients of a general second-order tangential operator.

    Each entry is None (structurally zero), a scalar, or a callable
    ``f(x, y, z) -> array`` evaluated on element nodes. Complex values are
    permitted throughout; real inputs promote losslessly.
    """

    a11: object = None
    a22: object = None
    a33: object = None
    a12: object = None
    a23: object = None
    a13: object = None
    b1: object = None
    b2: object = None
    b3: object = None
    c: object = None

    @staticmethod
    def laplace_beltrami(scale=1.0) -> "CoefficientField":
        return CoefficientField(a11=scale, a22=scale, a33=scale)

    @staticmethod
    def helmholtz_beltrami(shift=-1.0) -> "CoefficientField":
        return CoefficientField(a11=1.0, a22=1.0, a33=1.0, c=shift)

    def sample(self, points: np.ndarray, element_id: int | None = None) -> dict:
        """Evaluate all entries on the given (n, 3) points."""
        x, y, z = points[:, 0], points[:, 1], points[:, 2]
        out = {}
        for key in (*_A_KEYS, *_B_KEYS, "c"):
            val = getattr(self, key)
            if val is None:
                out[key] = None
                continue
            arr = np.asarray(val(x, y, z) if callable(val) else val)
            if arr.ndim == 0:
                arr = np.full(points.shape[0], arr[()])
            if not np.all(np.isfinite(arr)):
                k = int(np.argmin(np.isfinite(arr)))
                raise CoefficientEvaluationError(
                    f"coefficient {key} non-finite at node {k} "
                    f"(x = {points[k]}) of element {element_id}"
                )
            out[key] = arr
        return out


def coefficient_magnitudes(sampled: dict) -> tuple[float, float, float]:
    """Max absolute sampled magnitude for the (a, b, c) coefficient groups."""
    def group_max(keys):
        vals = [np.abs(sampled[k]).max() for k in keys if sampled[k] is not None]
        return float(max(vals)) if vals else 0.0

    return group_max(_A_KEYS), group_max(_B_KEYS), group_max(("c",))


def assemble_operator(
    element: Element,
    coeff: CoefficientField,
    ref: ReferenceOps | None = None,
    diff_mats: tuple | None = None,
    sampled: dict | None = None,
) -> np.ndarray:
    """Dense collocation matrix of the operator on one element."""
    ref = ref or get_reference_ops(element.order)
    if diff_mats is None:
        diff_mats = surface_diff_matrices(element, ref)
    if sampled is None:
        sampled = coeff.sample(element.nodes, element.id)
    n = (element.order + 1) ** 2
    Dx, Dy, Dz = diff_mats
    second = {
        "a11": (Dx, Dx), "a22": (Dy, Dy), "a33": (Dz, Dz),
        "a12": (Dx, Dy), "a23": (Dy, Dz), "a13": (Dx, Dz),
    }
    is_complex = any(
        sampled[k] is not None and np.iscomplexobj(sampled[k])
        for k in sampled
    )
    L = np.zeros((n, n), dtype=complex if is_complex else float)
    for key, (Di, Dj) in second.items():
        a = sampled[key]
        if a is not None:
            L += a[:, None] * (Di @ Dj)
    for key, Di in zip(_B_KEYS, (Dx, Dy, Dz)):
        b = sampled[key]
        if b is not None:
            L += b[:, None] * Di
    if sampled["c"] is not None:
        L[np.diag_indices(n)] += sampled["c"]
    return L


# ---------------------------------------------------------------------------
# Whole-mesh operator cache
# ---------------------------------------------------------------------------


@dataclass
class ElementOps:
    """Geometry-dependent operators of one element, coefficient-independent."""

    element: Element
    metric: MetricData
    diff_mats: tuple
    D_bn: np.ndarray
    boundary: BoundaryGeometry
    weights: np.ndarray  # quadrature weights incl. metric jacobian, (n,)


def _build_element_ops(element: Element, ref: ReferenceOps) -> ElementOps:
    metric = compute_metric(element, ref)
    diff_mats = surface_diff_matrices(element, ref, metric)
    geom = boundary_geometry(element, ref, metric)
    D_bn = binormal_operator(element, ref, metric, diff_mats, geom)
    return ElementOps(
        element=element, metric=metric, diff_mats=diff_mats, D_bn=D_bn,
        boundary=geom, weights=ref.w2 * metric.sqrt_det,
    )


class MeshOperators:
    """Per-element geometric operators and boundary-node bookkeeping.

    Reusable across factorizations of different coefficient fields on the
    same mesh. Boundary nodes are identified by canonical keys
    ``(element, side, k)``; the two sides of an interface share one key,
    with the reversal permutation k -> p-2-k folded in.
    """

    def __init__(self, mesh: SurfaceMesh, threads: int = 1):
        self.mesh = mesh
        self.ref = get_reference_ops(mesh.order)
        elems = mesh.elements
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                self.elements = list(
                    pool.map(lambda e: _build_element_ops(e, self.ref), elems)
                )
        else:
            self.elements = [_build_element_ops(e, self.ref) for e in elems]
        self._keys = [self._leaf_keys(e.id) for e in elems]

    @property
    def order(self) -> int:
        return self.ref.p

    def canonical_key(self, element: int, side: int, k: int):
        info = self.mesh.partner(element, side)
        if info is None:
            return (element, side, k)
        mate_el, mate_side, rev, am_second = info
        if not am_second:
            return (element, side, k)
        kk = (self.ref.p - 2 - k) if rev else k
        return (mate_el, mate_side, kk)

    def _leaf_keys(self, element: int) -> list:
        m = self.ref.p - 1
        return [
            self.canonical_key(element, side, k)
            for side in range(4)
            for k in range(m)
        ]

    def leaf_boundary_keys(self, element: int) -> list:
        return self._keys[element]

    def key_position(self, key) -> tuple[int, int]:
        """(element, side-major position) of a canonical key's own edge."""
        el, side, k = key
        return el, side * (self.ref.p - 1) + k

    def key_coords(self, key) -> np.ndarray:
        el, pos = self.key_position(key)
        return self.elements[el].boundary.coords[pos]

    def key_quadrature(self, key) -> float:
        """Edge quadrature weight (Fejer weight times arc-length jacobian)."""
        el, side, k = key
        _, pos = self.key_position(key)
        return float(self.ref.w_edge[k] * self.elements[el].boundary.arc_jac[pos])

    # -- quadrature -----------------------------------------------------

    def integral(self, values) -> float | complex:
        total = 0.0
        for ops, v in zip(self.elements, values):
            total = total + np.dot(ops.weights, v)
        return total

    def area(self) -> float:
        if not hasattr(self, "_area"):
            self._area = float(sum(ops.weights.sum() for ops in self.elements))
        return self._area

    def mean(self, values):
        return self.integral(values) / self.area()

    def norm_l2(self, values) -> float:
        sq = 0.0
        for ops, v in zip(self.elements, values):
            sq += float(np.dot(ops.weights, np.abs(v) ** 2).real)
        return float(np.sqrt(max(sq, 0.0)))
