"""Per-element solution operators and Dirichlet-to-Neumann maps.

Boundary bordering splits the collocation matrix into interior and
boundary blocks; the interior block is LU-factored once and reused for
every new right-hand side. All boundary operators live on the corner-free
first-kind edge grids: the solution operator takes 4(p-1) edge values and
returns all (p+1)^2 nodal values, and the DtN map sends edge values to
outward binormal flux on the same edge grid.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve

from .exceptions import ShapeMismatchError, SingularLeafError
from .surface_ops import (
    CoefficientField,
    ElementOps,
    ReferenceOps,
    assemble_operator,
)


@dataclass
class LeafOperators:
    """Factored local operators of a single element.

    ``solution_op`` rows at boundary indices hold the first-kind to
    second-kind boundary interpolation (corner rows average the two
    adjacent sides), so constant edge data extends to the constant
    function exactly.
    """

    element_id: int
    solution_op: np.ndarray        # (p+1)^2 x 4(p-1)
    dtn: np.ndarray                # 4(p-1) x 4(p-1)
    interior_lu: tuple             # LU factors of the row-scaled interior block
    row_scale: np.ndarray          # equilibration applied before factoring
    rhs_coupling: np.ndarray       # interior x boundary block (for residuals)
    v: np.ndarray                  # particular solution, (p+1)^2
    v_flux: np.ndarray             # particular flux, 4(p-1)

    def nbytes(self) -> int:
        return (self.solution_op.nbytes + self.dtn.nbytes
                + self.interior_lu[0].nbytes + self.v.nbytes
                + self.v_flux.nbytes)


def factor_leaf(
    ops: ElementOps,
    coeff: CoefficientField,
    ref: ReferenceOps,
    sampled: dict | None = None,
    operator: np.ndarray | None = None,
) -> LeafOperators:
    """Build the solution operator and DtN map of one element.

    Raises :class:`SingularLeafError` when the interior block has a pivot
    below 1e-14 times the matrix norm, which signals an interior
    eigenvalue of the local operator; callers may perturb the zeroth-order
    coefficient rather than regularize here.
    """
    el = ops.element
    L = operator
    if L is None:
        L = assemble_operator(el, coeff, ref, ops.diff_mats, sampled)
    J_i = ref.J_int
    L_ii = L[np.ix_(J_i, J_i)]
    B = L[np.ix_(J_i, ref.J_bnd)] @ ref.E_bnd \
        + L[np.ix_(J_i, ref.J_corner)] @ ref.E_corner

    # Row equilibration: spectral collocation rows vary by orders of
    # magnitude between near-edge and central nodes, and balancing them
    # buys the direct solve an extra digit or two.
    row_scale = 1.0 / np.abs(L_ii).max(axis=1)
    L_s = L_ii * row_scale[:, None]
    with warnings.catch_warnings():
        # singularity is detected via the pivot check below
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, piv = lu_factor(L_s, check_finite=False)
    if np.abs(np.diag(lu)).min() <= 1e-14 * np.abs(L_s).max():
        raise SingularLeafError(
            f"interior operator block of element {el.id} is singular "
            f"(smallest pivot below 1e-14 of matrix norm)"
        )

    n = L.shape[0]
    n_b = ref.n_bnd
    S = np.zeros((n, n_b), dtype=L.dtype)
    S[J_i] = -lu_solve((lu, piv), B * row_scale[:, None], check_finite=False)
    S[ref.J_bnd] = ref.E_bnd
    S[ref.J_corner] = ref.E_corner
    dtn = ops.D_bn @ S

    return LeafOperators(
        element_id=el.id,
        solution_op=S,
        dtn=dtn,
        interior_lu=(lu, piv),
        row_scale=row_scale,
        rhs_coupling=B,
        v=np.zeros(n, dtype=L.dtype),
        v_flux=np.zeros(n_b, dtype=L.dtype),
    )


def leaf_particular(
    leaf: LeafOperators, ops: ElementOps, ref: ReferenceOps, f_samples: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Particular solution and flux for a load sampled on the element grid.

    The particular solution vanishes on the element boundary; only the
    stored interior factorization is applied, never refactored.
    """
    n = (ref.p + 1) ** 2
    f_samples = np.asarray(f_samples)
    if f_samples.shape != (n,):
        raise ShapeMismatchError(
            f"element {leaf.element_id}: expected {n} load samples, "
            f"got shape {f_samples.shape}"
        )
    dtype = np.result_type(leaf.solution_op.dtype, f_samples.dtype)
    v = np.zeros(n, dtype=dtype)
    rhs = (f_samples[ref.J_int] * leaf.row_scale).astype(dtype)
    v[ref.J_int] = lu_solve(leaf.interior_lu, rhs, check_finite=False)
    v_flux = ops.D_bn @ v
    return v, v_flux
