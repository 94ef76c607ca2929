"""Shared fixtures: analytic fields, simple meshes, coefficient presets."""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln, lpmv

from surfhps import CoefficientField, Element, build_connectivity
from surfhps.spectral import cheb2_nodes


def real_sph_harm(l: int, m: int, pts: np.ndarray) -> np.ndarray:
    """Real orthonormal spherical harmonic evaluated at unit-sphere points.

    Uses the associated Legendre function in z directly (no arccos), which
    is well conditioned near the poles.
    """
    x, y, z = pts.T
    phi = np.arctan2(y, x)
    am = abs(m)
    norm = np.sqrt(
        (2 * l + 1) / (4 * np.pi) * np.exp(gammaln(l - am + 1) - gammaln(l + am + 1))
    )
    P = lpmv(am, l, np.clip(z, -1.0, 1.0))
    if m > 0:
        return np.sqrt(2) * norm * P * np.cos(m * phi)
    if m < 0:
        return np.sqrt(2) * norm * P * np.sin(am * phi)
    return norm * P


def sph_harm_rhs(l: int, m: int):
    """Load whose exact mean-zero solution is the (l, m) harmonic."""
    def f(x, y, z):
        return -l * (l + 1) * real_sph_harm(l, m, np.stack([x, y, z], axis=-1))
    return f


def flat_element(eid: int, p: int, x0: float, x1: float, y0: float, y1: float) -> Element:
    t = cheb2_nodes(p).nodes
    a = x0 + (x1 - x0) * (t + 1) / 2
    b = y0 + (y1 - y0) * (t + 1) / 2
    A = np.repeat(a, p + 1)
    B = np.tile(b, p + 1)
    return Element(eid, p, np.stack([A, B, np.zeros_like(A)], axis=1))


def flat_mesh(nx: int, ny: int, p: int, x_span=(-1.0, 1.0), y_span=(-1.0, 1.0)):
    """nx-by-ny grid of flat elements in the z = 0 plane."""
    xs = np.linspace(*x_span, nx + 1)
    ys = np.linspace(*y_span, ny + 1)
    els = []
    for j in range(nx):
        for i in range(ny):
            els.append(flat_element(len(els), p, xs[j], xs[j + 1], ys[i], ys[i + 1]))
    return build_connectivity(els)


def two_element_mesh(p: int):
    """Two unit flat elements sharing the edge x = 0."""
    els = [
        flat_element(0, p, -1.0, 0.0, 0.0, 1.0),
        flat_element(1, p, 0.0, 1.0, 0.0, 1.0),
    ]
    return build_connectivity(els)


def variable_c_field() -> CoefficientField:
    """Laplacian plus a strictly negative variable zero-order term."""
    return CoefficientField(
        a11=1.0, a22=1.0, a33=1.0,
        c=lambda x, y, z: -1.0 - x**2,
    )


def random_smooth_coefficients(seed: int = 7) -> CoefficientField:
    """Diagonally dominant smooth random coefficients (elliptic, nonsingular)."""
    rng = np.random.default_rng(seed)
    c1, c2, c3 = rng.uniform(0.5, 1.5, 3)
    e1, e2, e3 = rng.uniform(0.05, 0.12, 3)

    def mk_diag(c, e, k):
        return lambda x, y, z: c + e * np.sin(k[0] * x + k[1] * y + k[2] * z)

    ks = rng.integers(1, 3, size=(9, 3)).astype(float)
    return CoefficientField(
        a11=mk_diag(c1, e1, ks[0]),
        a22=mk_diag(c2, e2, ks[1]),
        a33=mk_diag(c3, e3, ks[2]),
        a12=lambda x, y, z: 0.08 * np.cos(x + 2 * y),
        a23=lambda x, y, z: 0.06 * np.sin(y - z),
        a13=lambda x, y, z: 0.05 * np.cos(2 * x + z),
        b1=lambda x, y, z: 0.4 * np.sin(y + z),
        b2=lambda x, y, z: 0.3 * np.cos(x - z),
        b3=lambda x, y, z: 0.2 * np.sin(x + y),
        c=lambda x, y, z: -1.0 - 0.5 * np.cos(x + y + z),
    )


def smooth_scalar(x, y, z):
    return np.sin(x + 2 * y) * np.cos(z - x) + 0.5 * np.cos(2 * z + y)


def smooth_load(x, y, z):
    return np.cos(2 * x - y) + np.sin(z + x) * np.cos(y)
