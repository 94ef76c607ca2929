"""One-dimensional Chebyshev primitives and tensor-product lifts.

Node sets, spectral differentiation matrices, barycentric Lagrange
interpolation, and Clenshaw-Curtis-type quadrature weights on [-1, 1],
together with Kronecker lifts of the differentiation matrix to the
reference square. All grids are ordered ascending and all outputs are
plain numpy arrays; construction is pure, so results can be shared
freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidOrderError

SECOND_KIND = "second-kind"
FIRST_KIND = "first-kind"


@dataclass(frozen=True)
class Grid1D:
    """A Chebyshev point set on [-1, 1], ordered ascending.

    Second-kind grids of order p have p+1 nodes including both endpoints;
    first-kind grids of degree q have q+1 nodes and contain neither
    endpoint.
    """

    kind: str
    order: int
    nodes: np.ndarray

    def __len__(self) -> int:
        return self.nodes.size


def cheb2_nodes(p: int) -> Grid1D:
    """Second-kind Chebyshev nodes -cos(k*pi/p), k = 0..p, ascending.

    Uses the sine form sin(pi*(2k - p)/(2p)), which is exactly
    antisymmetric and hits the endpoints -1 and +1 without rounding.
    """
    if p < 1:
        raise InvalidOrderError(f"second-kind grid needs order >= 1, got {p}")
    k = np.arange(p + 1)
    nodes = np.sin(np.pi * (2 * k - p) / (2 * p))
    return Grid1D(SECOND_KIND, p, nodes)


def cheb1_nodes(q: int) -> Grid1D:
    """First-kind Chebyshev nodes -cos((2k+1)*pi/(2q+2)), k = 0..q, ascending.

    The degree-q grid has q+1 nodes and excludes both endpoints.
    """
    if q < 0:
        raise InvalidOrderError(f"first-kind grid needs degree >= 0, got {q}")
    k = np.arange(q + 1)
    nodes = np.sin(np.pi * (2 * k - q) / (2 * (q + 1)))
    return Grid1D(FIRST_KIND, q, nodes)


def barycentric_weights(grid: Grid1D) -> np.ndarray:
    """Barycentric weights for a Chebyshev grid, up to a common scale."""
    n = len(grid)
    k = np.arange(n)
    if grid.kind == SECOND_KIND:
        w = np.where(k % 2 == 0, 1.0, -1.0)
        w[0] *= 0.5
        w[-1] *= 0.5
    elif grid.kind == FIRST_KIND:
        q = grid.order
        w = (-1.0) ** k * np.sin((2 * k + 1) * np.pi / (2 * q + 2))
    else:
        raise ValueError(f"unknown grid kind {grid.kind!r}")
    return w


def diff_matrix(p: int) -> np.ndarray:
    """Spectral differentiation matrix on the ascending second-kind grid.

    Differentiates all polynomials of degree <= p exactly at the nodes of
    ``cheb2_nodes(p)``. Diagonal entries use the negative-sum trick to
    keep row sums at rounding level.
    """
    if p < 1:
        raise InvalidOrderError(f"differentiation matrix needs order >= 1, got {p}")
    x = cheb2_nodes(p).nodes
    c = np.ones(p + 1)
    c[0] = 2.0
    c[-1] = 2.0
    sign = (-1.0) ** np.arange(p + 1)
    cs = c * sign
    dx = x[:, None] - x[None, :]
    np.fill_diagonal(dx, 1.0)
    D = (cs[:, None] / cs[None, :]) / dx
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return D


def interp_matrix(src: Grid1D, dst: Grid1D) -> np.ndarray:
    """Barycentric Lagrange interpolation matrix from src nodes to dst nodes.

    Rows sum to one; interpolation is exact for polynomials up to the
    degree of the source grid. Destination points coinciding with a
    source node produce exact unit rows.
    """
    if len(src) < 1:
        raise InvalidOrderError("source grid must have at least one node")
    w = barycentric_weights(src)
    xs = src.nodes
    xd = dst.nodes
    M = np.zeros((len(dst), len(src)))
    for i, x in enumerate(xd):
        d = x - xs
        hit = np.abs(d) < 1e-14
        if hit.any():
            M[i, np.argmax(hit)] = 1.0
        else:
            r = w / d
            M[i] = r / r.sum()
    return M


def _chebyshev_moments(n: int) -> np.ndarray:
    """Integrals of T_0..T_{n-1} over [-1, 1]: 0 for odd k, 2/(1-k^2) even."""
    k = np.arange(n)
    mu = np.zeros(n)
    even = k % 2 == 0
    mu[even] = 2.0 / (1.0 - k[even].astype(float) ** 2)
    return mu


def _moment_weights(nodes: np.ndarray) -> np.ndarray:
    # Solve sum_k w_k T_j(x_k) = int T_j for j = 0..n-1. The Chebyshev
    # Vandermonde matrix at Chebyshev-type nodes is well conditioned.
    n = nodes.size
    theta = np.arccos(np.clip(nodes, -1.0, 1.0))
    V = np.cos(np.outer(np.arange(n), theta))
    return np.linalg.solve(V, _chebyshev_moments(n))


def cc_weights(p: int) -> np.ndarray:
    """Clenshaw-Curtis quadrature weights on the p+1 second-kind nodes.

    The weights are positive, sum to 2, and integrate polynomials of
    degree <= p exactly on [-1, 1].
    """
    if p < 1:
        raise InvalidOrderError(f"quadrature needs order >= 1, got {p}")
    return _moment_weights(cheb2_nodes(p).nodes)


def fejer1_weights(q: int) -> np.ndarray:
    """Fejer first-rule quadrature weights on the q+1 first-kind nodes.

    The first-kind analogue of Clenshaw-Curtis: positive weights, exact
    for polynomials of degree <= q.
    """
    if q < 0:
        raise InvalidOrderError(f"quadrature needs degree >= 0, got {q}")
    return _moment_weights(cheb1_nodes(q).nodes)


def tensor_diff(p: int) -> tuple[np.ndarray, np.ndarray]:
    """Differentiation matrices (D_xi, D_eta) on the reference square.

    Fields on the (p+1)^2 tensor grid are stacked column-wise with linear
    index k = j*(p+1) + i, where j indexes xi and i indexes eta. Then

        D_xi  = kron(D, I)   differentiates along xi,
        D_eta = kron(I, D)   differentiates along eta.
    """
    D = diff_matrix(p)
    eye = np.eye(p + 1)
    return np.kron(D, eye), np.kron(eye, D)
