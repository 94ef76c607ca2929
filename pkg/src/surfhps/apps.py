"""Application drivers built on the direct solver.

Laplace-Beltrami solves on closed surfaces with mean-zero handling, Hodge
decomposition of tangential vector fields, and semi-implicit (IMEX-BDF)
time stepping for reaction-diffusion systems, including a two-species
Turing model and the complex Ginzburg-Landau equation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .exceptions import (
    BoundaryDataError,
    DivergenceError,
    ShapeMismatchError,
    StaleFactorizationError,
    TangencyError,
)
from .hierarchy import Factorization, build_factorization, update_rhs
from .mesh import SurfaceMesh
from .solve import Solution, solve
from .surface_ops import CoefficientField, MeshOperators


def project_mean_zero(ops: MeshOperators, values: list) -> list:
    """Subtract the surface mean computed with metric-weighted quadrature."""
    mean = ops.mean(values)
    return [v - mean for v in values]


def solve_laplace_beltrami(
    ops: MeshOperators, f, fact: Factorization | None = None, threads: int = 1
) -> Solution:
    """Solve the surface Poisson problem on a closed mesh.

    The load is projected to mean zero before the solve and the solution
    is projected to mean zero afterwards; the factorization (built here if
    not supplied) carries the closed-surface rank-one repair and can be
    reused for any number of loads.
    """
    if not ops.mesh.closed:
        raise BoundaryDataError(
            "mesh has a boundary; use build_factorization/solve with "
            "Dirichlet data instead"
        )
    if fact is None:
        fact = laplace_beltrami_factorization(ops, threads=threads)
    loads = _sample_field(ops, f)
    loads = project_mean_zero(ops, loads)
    update_rhs(fact, loads, threads=threads)
    sol = solve(fact)
    sol.values = project_mean_zero(ops, sol.values)
    return sol


def laplace_beltrami_factorization(ops: MeshOperators, threads: int = 1) -> Factorization:
    return build_factorization(
        ops, CoefficientField.laplace_beltrami(), threads=threads,
        meta={"pde": "laplace-beltrami"},
    )


def _sample_field(ops: MeshOperators, f) -> list[np.ndarray]:
    n = (ops.order + 1) ** 2
    if callable(f):
        return [np.asarray(f(*eo.element.nodes.T)) + np.zeros(n)
                for eo in ops.elements]
    arrays = [np.asarray(a) for a in f]
    if len(arrays) != len(ops.elements) or any(a.shape != (n,) for a in arrays):
        raise ShapeMismatchError("field does not match the mesh layout")
    return arrays


# ---------------------------------------------------------------------------
# Tangential calculus
# ---------------------------------------------------------------------------


@dataclass
class TangentField:
    """Per-element arrays of R^3 vectors at the element nodes."""

    values: list[np.ndarray]  # each ((p+1)^2, 3)

    def __add__(self, other):
        return TangentField([a + b for a, b in zip(self.values, other.values)])

    def __sub__(self, other):
        return TangentField([a - b for a, b in zip(self.values, other.values)])


def surface_gradient(ops: MeshOperators, u) -> TangentField:
    """Componentwise tangential gradient of a scalar field."""
    u = _sample_field(ops, u)
    out = []
    for eo, v in zip(ops.elements, u):
        Dx, Dy, Dz = eo.diff_mats
        out.append(np.stack([Dx @ v, Dy @ v, Dz @ v], axis=1))
    return TangentField(out)


def surface_divergence(ops: MeshOperators, F: TangentField) -> list[np.ndarray]:
    """Tangential divergence of a vector field."""
    if len(F.values) != len(ops.elements):
        raise ShapeMismatchError("vector field does not match the mesh")
    out = []
    for eo, vec in zip(ops.elements, F.values):
        Dx, Dy, Dz = eo.diff_mats
        out.append(Dx @ vec[:, 0] + Dy @ vec[:, 1] + Dz @ vec[:, 2])
    return out


def cross_normal(ops: MeshOperators, F: TangentField) -> TangentField:
    """Pointwise n x F with the element unit normals."""
    return TangentField([
        np.cross(eo.metric.normal, vec)
        for eo, vec in zip(ops.elements, F.values)
    ])


def tangency_defect(ops: MeshOperators, F: TangentField) -> float:
    worst = 0.0
    for eo, vec in zip(ops.elements, F.values):
        dot = np.abs(np.einsum("ij,ij->i", vec, eo.metric.normal))
        mag = np.linalg.norm(vec, axis=1).max()
        if mag > 0:
            worst = max(worst, float(dot.max() / mag))
    return worst


def field_norm_l2(ops: MeshOperators, F: TangentField) -> float:
    sq = 0.0
    for eo, vec in zip(ops.elements, F.values):
        sq += float(np.dot(eo.weights, np.einsum("ij,ij->i", vec, vec)))
    return float(np.sqrt(max(sq, 0.0)))


def hodge_decompose(
    ops: MeshOperators,
    F: TangentField,
    fact: Factorization | None = None,
    tangency_tol: float = 1e-8,
    threads: int = 1,
):
    """Split a tangential field into curl-free, divergence-free, harmonic parts.

    Solves two surface Poisson problems sharing one factorization:
    one for the potential of the curl-free part driven by div F, one for
    the stream function of the divergence-free part driven by -div(n x F).
    Returns (u, v, w) with F = grad u + n x grad v + w.
    """
    if not ops.mesh.closed:
        raise BoundaryDataError("Hodge decomposition requires a closed mesh")
    defect = tangency_defect(ops, F)
    if defect > tangency_tol:
        raise TangencyError(
            f"input field violates tangency: max |F.n|/|F| = {defect:.3e}"
        )
    if fact is None:
        fact = laplace_beltrami_factorization(ops, threads=threads)
    u = solve_laplace_beltrami(ops, surface_divergence(ops, F), fact, threads)
    rhs_v = [-d for d in surface_divergence(ops, cross_normal(ops, F))]
    v = solve_laplace_beltrami(ops, rhs_v, fact, threads)
    grad_u = surface_gradient(ops, u.values)
    rot_v = cross_normal(ops, surface_gradient(ops, v.values))
    w = TangentField([
        Fv - gu - rv
        for Fv, gu, rv in zip(F.values, grad_u.values, rot_v.values)
    ])
    return u, v, w


# ---------------------------------------------------------------------------
# IMEX-BDF time stepping
# ---------------------------------------------------------------------------

_IMEX_TABLE = {
    1: (Fraction(1), (Fraction(1),), (Fraction(1),)),
    2: (Fraction(2, 3),
        (Fraction(4, 3), Fraction(-1, 3)),
        (Fraction(4, 3), Fraction(-2, 3))),
    3: (Fraction(6, 11),
        (Fraction(18, 11), Fraction(-9, 11), Fraction(2, 11)),
        (Fraction(18, 11), Fraction(-18, 11), Fraction(6, 11))),
    4: (Fraction(12, 25),
        (Fraction(48, 25), Fraction(-36, 25), Fraction(16, 25), Fraction(-3, 25)),
        (Fraction(48, 25), Fraction(-72, 25), Fraction(48, 25), Fraction(-12, 25))),
}


@dataclass(frozen=True)
class ImexScheme:
    """Coefficients of the order-K implicit-explicit BDF scheme."""

    order: int
    omega: float
    mu: tuple[float, ...]
    nu: tuple[float, ...]

    @staticmethod
    def of_order(K: int) -> "ImexScheme":
        if K not in _IMEX_TABLE:
            raise ShapeMismatchError(f"IMEX-BDF order must be 1..4, got {K}")
        om, mu, nu = _IMEX_TABLE[K]
        return ImexScheme(K, float(om), tuple(map(float, mu)), tuple(map(float, nu)))

    @staticmethod
    def exact_table(K: int):
        """Rational coefficient table, for consistency checks."""
        return _IMEX_TABLE[K]


@dataclass(frozen=True)
class ReactionModel:
    """Pointwise (non-differential) reaction terms of a PDE system.

    ``functions[s]`` maps the tuple of species arrays at one element to
    the reaction of species s; ``diffusion[s]`` is the coefficient field
    of that species' implicit operator.
    """

    n_species: int
    functions: tuple
    diffusion: tuple  # CoefficientField per species
    params: dict = field(default_factory=dict)


def imex_factorization(
    ops: MeshOperators,
    diffusion: CoefficientField,
    omega_dt: float | complex,
    threads: int = 1,
) -> Factorization:
    """Factor the implicit operator I - omega*dt*L for one species."""

    def scaled(entry):
        if entry is None:
            return None
        if callable(entry):
            return lambda x, y, z, _e=entry: -omega_dt * np.asarray(_e(x, y, z))
        return -omega_dt * entry

    shifted_c = (
        1.0 if diffusion.c is None
        else (lambda x, y, z: 1.0 - omega_dt * np.asarray(
            diffusion.c(x, y, z) if callable(diffusion.c) else diffusion.c))
    )
    coeff = CoefficientField(
        a11=scaled(diffusion.a11), a22=scaled(diffusion.a22),
        a33=scaled(diffusion.a33), a12=scaled(diffusion.a12),
        a23=scaled(diffusion.a23), a13=scaled(diffusion.a13),
        b1=scaled(diffusion.b1), b2=scaled(diffusion.b2),
        b3=scaled(diffusion.b3), c=shifted_c,
    )
    return build_factorization(
        ops, coeff, threads=threads, meta={"omega_dt": complex(omega_dt)},
    )


def imex_bdf_step(
    facts,
    scheme: ImexScheme,
    history: list,
    reactions: ReactionModel | None,
    dt: float,
    threads: int = 1,
):
    """One IMEX-BDF step of a (possibly multi-species) reaction-diffusion system.

    ``history[i]`` holds the state at step k-i, newest first; a state is a
    list over species of per-element arrays. ``facts`` gives one
    factorization per species, each built for I - omega*dt*L of that
    species; a mismatch in omega*dt raises StaleFactorizationError.
    """
    if isinstance(facts, Factorization):
        facts = [facts]
    K = scheme.order
    if len(history) < K:
        raise ShapeMismatchError(
            f"IMEX-BDF{K} needs {K} history states, got {len(history)}"
        )
    n_sp = len(facts)
    for fac in facts:
        cached = fac.meta.get("omega_dt")
        if cached is None or abs(complex(cached) - scheme.omega * dt) > 1e-13 * max(
            1.0, abs(scheme.omega * dt)
        ):
            raise StaleFactorizationError(
                f"factorization was built for omega*dt={cached}, "
                f"step needs {scheme.omega * dt}"
            )

    n_elem = len(facts[0].leaves)
    new_state = []
    for s in range(n_sp):
        rhs = []
        for e in range(n_elem):
            acc = 0.0
            for i in range(K):
                state = history[i]
                acc = acc + scheme.mu[i] * state[s][e]
                if reactions is not None:
                    species_at_e = tuple(state[t][e] for t in range(n_sp))
                    acc = acc + dt * scheme.nu[i] * reactions.functions[s](*species_at_e)
            rhs.append(acc)
        update_rhs(facts[s], rhs, threads=threads)
        sol = solve(facts[s])
        new_state.append(sol.values)
    return new_state


def _bootstrap_substeps(dt: float, K: int) -> int:
    # Startup states must not pollute the O(dt^K) global error: run the
    # ramp at a substep h with h^2 ~ dt^K.
    if K <= 2:
        return 1
    target = 0.2 * dt ** (K / 2.0)
    return max(1, int(np.ceil(dt / target)))


class ImexIntegrator:
    """Reusable IMEX-BDF integrator with order-ramped startup.

    Builds one factorization per (species, omega*dt) pair once; the main
    loop reuses a single factorization per species for every step. The
    startup ramp (BDF1, BDF2, ..., K) runs on a refined substep so that
    its local error stays below the scheme's global order.
    """

    def __init__(self, ops: MeshOperators, reactions: ReactionModel,
                 dt: float, order: int = 4, threads: int = 1):
        self.ops = ops
        self.reactions = reactions
        self.dt = dt
        self.order = order
        self.threads = threads
        self._facts: dict = {}

    def factorizations(self, dt: float, K: int):
        key = (round(ImexScheme.of_order(K).omega * dt, 15),)
        if key not in self._facts:
            omega_dt = ImexScheme.of_order(K).omega * dt
            self._facts[key] = [
                imex_factorization(self.ops, diff, omega_dt, self.threads)
                for diff in self.reactions.diffusion
            ]
        return self._facts[key]

    def _advance(self, history, dt, K):
        scheme = ImexScheme.of_order(K)
        facts = self.factorizations(dt, K)
        state = imex_bdf_step(facts, scheme, history, self.reactions, dt,
                              self.threads)
        return state

    def startup(self, state0):
        """States at t = 0, dt, ..., (K-1)dt via a substepped order ramp."""
        K = self.order
        if K == 1:
            return [state0]
        n_sub = _bootstrap_substeps(self.dt, K)
        h = self.dt / n_sub
        states = [state0]  # newest first: index 0 is latest
        fine_hist = [state0]
        total = (K - 1) * n_sub
        for step in range(1, total + 1):
            k_eff = min(len(fine_hist), K)
            state = self._advance(fine_hist[:k_eff], h, k_eff)
            fine_hist.insert(0, state)
            if len(fine_hist) > K:
                fine_hist.pop()
            if step % n_sub == 0:
                states.insert(0, state)
        return states

    def run(self, state0, steps: int, snapshot_every: int = 0,
            check_every: int = 10):
        """Integrate ``steps`` steps of size dt from state0.

        Returns (final state, snapshots) where snapshots is a list of
        (step index, state). Non-finite state raises DivergenceError with
        the offending step.
        """
        K = self.order
        history = self.startup(state0)
        snapshots = [(0, state0)]
        start = len(history) - 1
        main_facts = self.factorizations(self.dt, K) if steps > start else None
        for k, state in enumerate(reversed(history[:-1]), start=1):
            if snapshot_every and k % snapshot_every == 0:
                snapshots.append((k, state))
        state = history[0]
        for step in range(start + 1, steps + 1):
            scheme = ImexScheme.of_order(K)
            state = imex_bdf_step(main_facts, scheme, history, self.reactions,
                                  self.dt, self.threads)
            history.insert(0, state)
            history.pop()
            if check_every and step % check_every == 0:
                if not all(np.all(np.isfinite(arr)) for sp in state for arr in sp):
                    raise DivergenceError(
                        f"non-finite state at step {step}", step=step
                    )
            if snapshot_every and step % snapshot_every == 0:
                snapshots.append((step, state))
        if not all(np.all(np.isfinite(arr)) for sp in state for arr in sp):
            raise DivergenceError(f"non-finite state at step {steps}", step=steps)
        return state, snapshots


# ---------------------------------------------------------------------------
# Concrete models
# ---------------------------------------------------------------------------


def turing_model(
    delta_v: float,
    tau2: float,
    alpha: float = 0.899,
    beta: float = -0.91,
    gamma: float = -0.899,
    tau1: float = 0.02,
    delta_u: float | None = None,
) -> ReactionModel:
    """Two-species activator-inhibitor system with Turing-pattern regimes."""
    if delta_u is None:
        delta_u = 0.516 * delta_v

    def react_u(u, v):
        return alpha * u * (1.0 - tau1 * v**2) + v * (1.0 - tau2 * u)

    def react_v(u, v):
        return beta * v * (1.0 + alpha * tau1 / beta * u * v) + u * (gamma + tau2 * v)

    return ReactionModel(
        n_species=2,
        functions=(react_u, react_v),
        diffusion=(
            CoefficientField.laplace_beltrami(delta_u),
            CoefficientField.laplace_beltrami(delta_v),
        ),
        params={"alpha": alpha, "beta": beta, "gamma": gamma,
                "tau1": tau1, "tau2": tau2,
                "delta_u": delta_u, "delta_v": delta_v},
    )


def ginzburg_landau_model(alpha: float, beta: float, delta: float) -> ReactionModel:
    """Complex Ginzburg-Landau: cubic reaction, complex diffusion coefficient."""

    def react(u):
        return u - (1.0 + 1j * beta) * u * np.abs(u) ** 2

    return ReactionModel(
        n_species=1,
        functions=(react,),
        diffusion=(CoefficientField.laplace_beltrami(delta * (1.0 + 1j * alpha)),),
        params={"alpha": alpha, "beta": beta, "delta": delta},
    )


def random_smooth_field(ops: MeshOperators, seed: int = 42, amplitude: float = 1.0,
                        complex_valued: bool = False) -> list[np.ndarray]:
    """Fixed-seed smooth random field from low-order trigonometric modes."""
    rng = np.random.default_rng(seed)
    n_modes = 6
    ks = rng.integers(1, 3, size=(n_modes, 3))
    phases = rng.uniform(0, 2 * np.pi, size=n_modes)
    amps = rng.normal(size=n_modes)
    if complex_valued:
        amps = amps + 1j * rng.normal(size=n_modes)
    out = []
    for eo in ops.elements:
        x, y, z = eo.element.nodes.T
        v = np.zeros(x.size, dtype=complex if complex_valued else float)
        for (kx, ky, kz), ph, a in zip(ks, phases, amps):
            v += a * np.sin(kx * x + ky * y + kz * z + ph)
        out.append(amplitude * v / n_modes)
    return out


def random_tangent_field(ops: MeshOperators, seed: int = 42,
                         amplitude: float = 1.0) -> TangentField:
    """Fixed-seed smooth ambient field projected onto the tangent planes."""
    rng = np.random.default_rng(seed)
    n_modes = 5
    ks = rng.integers(1, 3, size=(n_modes, 3, 3))
    phases = rng.uniform(0, 2 * np.pi, size=(n_modes, 3))
    amps = rng.normal(size=(n_modes, 3))
    out = []
    for eo in ops.elements:
        x, y, z = eo.element.nodes.T
        vec = np.zeros((x.size, 3))
        for m in range(n_modes):
            for c in range(3):
                kx, ky, kz = ks[m, c]
                vec[:, c] += amps[m, c] * np.sin(
                    kx * x + ky * y + kz * z + phases[m, c]
                )
        nrm = eo.metric.normal
        vec -= np.einsum("ij,ij->i", vec, nrm)[:, None] * nrm
        out.append(amplitude * vec / n_modes)
    return TangentField(out)


def simulate_turing(
    ops: MeshOperators,
    params: dict,
    dt: float,
    steps: int,
    order: int = 4,
    snapshot_every: int = 0,
    seed: int = 42,
    initial=None,
    threads: int = 1,
):
    """Run the two-species Turing system with IMEX-BDF time stepping."""
    model = turing_model(**params)
    integ = ImexIntegrator(ops, model, dt, order=order, threads=threads)
    if initial is None:
        u0 = random_smooth_field(ops, seed=seed, amplitude=0.5)
        v0 = random_smooth_field(ops, seed=seed + 1, amplitude=0.5)
        initial = [u0, v0]
    return integ.run(initial, steps, snapshot_every=snapshot_every)


def simulate_cgl(
    ops: MeshOperators,
    alpha: float,
    beta: float,
    delta: float,
    dt: float,
    steps: int,
    order: int = 4,
    snapshot_every: int = 0,
    seed: int = 42,
    initial=None,
    threads: int = 1,
):
    """Run the complex Ginzburg-Landau equation with IMEX-BDF time stepping."""
    model = ginzburg_landau_model(alpha, beta, delta)
    integ = ImexIntegrator(ops, model, dt, order=order, threads=threads)
    if initial is None:
        initial = [random_smooth_field(ops, seed=seed, amplitude=0.1,
                                       complex_valued=True)]
    return integ.run(initial, steps, snapshot_every=snapshot_every)
