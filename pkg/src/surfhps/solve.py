"""Downward solve pass, pointwise evaluation, and solution export.

Given a completed factorization and Dirichlet data on the root boundary
(empty for closed surfaces), the solve recovers interface values level by
level and finally applies each element's local solution operator. The
traversal is an explicit level-ordered loop, so deep hierarchies cannot
overflow the call stack and nodes within a level are independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import BoundaryDataError, ShapeMismatchError
from .hierarchy import Factorization
from .spectral import barycentric_weights, cheb2_nodes


@dataclass
class Solution:
    """Per-element nodal solution values on a surface mesh."""

    mesh: object
    values: list[np.ndarray]  # each ((p+1)^2,)

    @property
    def order(self) -> int:
        return self.mesh.order

    def stacked(self) -> np.ndarray:
        return np.concatenate(self.values)

    def norm_inf(self) -> float:
        return max(float(np.abs(v).max()) for v in self.values)


def solve(fact: Factorization, g=None) -> Solution:
    """Recover the solution on all elements from root boundary data.

    ``g`` orders values by ``fact.root_keys`` (see
    :meth:`Factorization.boundary_coords`); closed surfaces take no data.
    The factorization is read-only here, so concurrent solves are safe.
    """
    n_root = fact.boundary_size()
    if g is None:
        g = np.zeros(n_root)
    elif callable(g):
        coords = fact.boundary_coords()
        g = np.asarray(g(coords[:, 0], coords[:, 1], coords[:, 2]))
    else:
        g = np.asarray(g)
    if g.shape != (n_root,):
        raise ShapeMismatchError(
            f"boundary data must have {n_root} values, got shape {g.shape}"
        )
    if n_root == 0 and not fact.closed:
        raise BoundaryDataError("open mesh has an empty root boundary")

    parent_of = {ch: cid for cid, ch in fact.tree.children.items() if ch is not None}
    data = {fact.root: g}
    for level in reversed(fact.tree.levels):
        for a, b in level:
            node = fact.nodes[parent_of[(a, b)]]
            g_m = data.pop(parent_of[(a, b)])
            u_I = node.interface_op @ g_m + node.v_interface
            n_ka = node.keep_a.size
            g_a = np.empty(node.keep_a.size + node.shared_a.size, dtype=u_I.dtype)
            g_b = np.empty(node.keep_b.size + node.shared_b.size, dtype=u_I.dtype)
            g_a[node.keep_a] = g_m[:n_ka]
            g_a[node.shared_a] = u_I
            g_b[node.keep_b] = g_m[n_ka:]
            g_b[node.shared_b] = u_I
            data[a] = g_a
            data[b] = g_b

    values = []
    for i, leaf in enumerate(fact.leaves):
        u = leaf.solution_op @ data[i] + leaf.v
        values.append(u)
    return Solution(mesh=fact.mesh, values=values)


def evaluate(sol: Solution, element: int, xi: float, eta: float):
    """Barycentric evaluation of the solution inside one element."""
    if not (-1.0 <= xi <= 1.0 and -1.0 <= eta <= 1.0):
        raise ShapeMismatchError(
            f"parameters must lie in [-1,1]^2, got ({xi}, {eta})"
        )
    p = sol.order
    grid = cheb2_nodes(p)
    w = barycentric_weights(grid)

    def row(t):
        d = t - grid.nodes
        hit = np.abs(d) < 1e-14
        if hit.any():
            r = np.zeros(p + 1)
            r[np.argmax(hit)] = 1.0
            return r
        r = w / d
        return r / r.sum()

    U = sol.values[element].reshape(p + 1, p + 1, order="F")  # [i (eta), j (xi)]
    return row(eta) @ U @ row(xi)


def interface_mismatch(fact: Factorization, sol: Solution) -> float:
    """Largest disagreement of the two sides' edge-grid traces.

    Restricts each element's nodal values to its corner-free edge grids
    and compares interface partners after orientation alignment.
    """
    ops = fact.mesh_ops
    ref = ops.ref
    m = ref.p - 1
    worst = 0.0
    for a, b in ops.mesh.interfaces:
        ta = ref.R @ sol.values[a.element][ref.side_idx[a.side]]
        tb = ref.R @ sol.values[b.element][ref.side_idx[b.side]]
        if b.reversed:
            tb = tb[::-1]
        worst = max(worst, float(np.abs(ta - tb).max()))
    return worst


def _fmt(v) -> str:
    if isinstance(v, complex) or np.iscomplexobj(np.asarray(v)):
        return f"{float(np.real(v))!r} {float(np.imag(v))!r}"
    return repr(float(v))


def write_pointcloud(mesh, values: list, path, header: str | None = None) -> None:
    """Write per-node values as text: ``x y z value`` (complex: re, im).

    One block per element, introduced by a ``# element <id>`` line. Floats
    use shortest round-trip printing, so outputs are byte-stable.
    """
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write(f"# {header}\n")
        for e, vals in zip(mesh.elements, values):
            fh.write(f"# element {e.id}\n")
            for (x, y, z), v in zip(e.nodes, vals):
                fh.write(f"{float(x)!r} {float(y)!r} {float(z)!r} {_fmt(v)}\n")
