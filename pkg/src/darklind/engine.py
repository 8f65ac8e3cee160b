"""Exact evolution under the time-dependent Lindblad equation.

Brute-force reference dynamics for everything the effective dark-space theory
predicts: an embedded Runge-Kutta 5(4) integrator with PI step control and
per-step physicality checks, superoperator vectorization and spectral
analysis, the infinite-time channel and its Kraus decomposition.

Conventions: the dissipation rate is absorbed into the jump operators
(gamma = 1) and time is the dimensionless tau = gamma * t.  Superoperators
act on row-major vectorized matrices, vec(A rho B) = (A kron B^T) vec(rho).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .linalg import dagger, frobenius, is_hermitian

__all__ = [
    "LindbladGenerator",
    "Trajectory",
    "StepStats",
    "StepSizeUnderflowError",
    "InvariantViolationError",
    "GaplessLindbladianError",
    "lindblad_rhs",
    "integrate",
    "vectorize",
    "apply_superoperator",
    "spectral_gap",
    "asymptotic_channel",
    "kraus_from_channel",
    "dark_block_kraus",
    "validate_density_matrix",
]

# physicality tolerances for integrated states; violations beyond 100x abort
HERMITICITY_TOL = 1e-10
TRACE_TOL = 1e-9
POSITIVITY_TOL = 1e-8
KERNEL_TOL = 1e-8


class StepSizeUnderflowError(RuntimeError):
    """Adaptive step size collapsed; carries the time of failure."""

    def __init__(self, tau: float, step: float):
        super().__init__(f"step size underflow at tau={tau:.6g} (h={step:.3g})")
        self.tau = tau


class InvariantViolationError(RuntimeError):
    """Integrated state left the physical manifold far beyond tolerance."""

    def __init__(self, tau: float, what: str, value: float):
        super().__init__(f"{what} violated at tau={tau:.6g} ({what}={value:.3g})")
        self.tau = tau
        self.what = what


class GaplessLindbladianError(RuntimeError):
    """Operation requires a spectrally gapped Lindbladian."""


@dataclass(frozen=True)
class LindbladGenerator:
    """Generator of a (possibly Hamiltonian-corrected) Lindblad equation.

    ``hamiltonian_prefactor`` scales the commutator term; in the rotating
    frame it carries the adiabatic parameter 1/(gamma T) so the Hamiltonian
    itself can stay O(1).
    """

    hamiltonian: np.ndarray | None
    jumps: tuple = ()
    hamiltonian_prefactor: float = 1.0

    def __post_init__(self):
        if self.hamiltonian is not None and not is_hermitian(self.hamiltonian, 1e-10):
            raise ValueError("hamiltonian must be Hermitian to 1e-10")
        object.__setattr__(self, "jumps", tuple(np.asarray(j, dtype=complex) for j in self.jumps))

    @property
    def dim(self) -> int:
        if self.hamiltonian is not None:
            return self.hamiltonian.shape[0]
        if self.jumps:
            return self.jumps[0].shape[0]
        raise ValueError("empty generator has no dimension")


@dataclass(frozen=True)
class StepStats:
    accepted: int
    rejected: int
    rhs_evaluations: int


@dataclass(frozen=True)
class Trajectory:
    """Time-stamped states from one integration run."""

    times: np.ndarray
    states: list
    step_stats: StepStats

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def lindblad_rhs(rho: np.ndarray, gen: LindbladGenerator) -> np.ndarray:
    """Right-hand side -i*pref*[H,rho] + sum_k (L rho L^dag - {L^dag L, rho}/2)."""
    rho = np.asarray(rho, dtype=complex)
    out = np.zeros_like(rho)
    if gen.hamiltonian is not None:
        h = gen.hamiltonian
        if h.shape != rho.shape:
            raise ValueError(f"dimension mismatch: H {h.shape} vs rho {rho.shape}")
        out += -1j * gen.hamiltonian_prefactor * (h @ rho - rho @ h)
    for jump in gen.jumps:
        if jump.shape != rho.shape:
            raise ValueError(f"dimension mismatch: L {jump.shape} vs rho {rho.shape}")
        jd = dagger(jump)
        jdj = jd @ jump
        out += jump @ rho @ jd - 0.5 * (jdj @ rho + rho @ jdj)
    return out


def validate_density_matrix(
    rho: np.ndarray,
    hermiticity_tol: float = HERMITICITY_TOL,
    trace_tol: float = TRACE_TOL,
    positivity_tol: float = POSITIVITY_TOL,
) -> None:
    """Raise ValueError unless rho is Hermitian, unit trace and positive."""
    rho = np.asarray(rho, dtype=complex)
    herm = frobenius(rho - dagger(rho))
    if herm > hermiticity_tol:
        raise ValueError(f"not Hermitian: |rho - rho^dag| = {herm:.3g}")
    tr = abs(np.trace(rho) - 1.0)
    if tr > trace_tol:
        raise ValueError(f"trace deviates from 1 by {tr:.3g}")
    min_eig = float(np.linalg.eigvalsh(0.5 * (rho + dagger(rho))).min())
    if min_eig < -positivity_tol:
        raise ValueError(f"negative eigenvalue {min_eig:.3g}")


# Dormand-Prince 5(4) coefficients (FSAL)
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)
_DP_ERR = _DP_B5 - _DP_B4


def adaptive_rk45(
    fun: Callable[[float, np.ndarray], np.ndarray],
    y0: np.ndarray,
    t0: float,
    t1: float,
    rtol: float,
    atol: float,
    max_step: float = 0.1,
    first_step: float | None = None,
    checkpoints: Sequence[float] | None = None,
    on_accept: Callable[[float, np.ndarray], None] | None = None,
):
    """Generic embedded RK 5(4) driver for complex vector ODEs.

    PI step-size control (order-5 propagation, order-4 error estimate).  The
    step is capped so checkpoints are hit exactly; ``on_accept`` runs after
    every accepted step.  Returns (checkpoint_times, checkpoint_states,
    StepStats).
    """
    y = np.asarray(y0, dtype=complex).copy()
    t = float(t0)
    span = t1 - t0
    if span < 0:
        raise ValueError("backward integration not supported")
    if checkpoints is None:
        cps = [t1]
    else:
        cps = sorted(float(c) for c in checkpoints)
        if cps and (cps[0] < t0 - 1e-12 or cps[-1] > t1 + 1e-12):
            raise ValueError("checkpoints outside integration span")
        if not cps or abs(cps[-1] - t1) > 1e-12:
            cps.append(t1)
    out_t: list[float] = []
    out_y: list[np.ndarray] = []
    if abs(cps[0] - t0) <= 1e-12:
        out_t.append(t0)
        out_y.append(y.copy())
        cps = cps[1:]

    if span == 0.0:
        if not out_t:
            out_t, out_y = [t0], [y.copy()]
        return np.array(out_t), out_y, StepStats(0, 0, 0)

    h_free = span / 1e3 if first_step is None else float(first_step)
    h_free = min(h_free, max_step, span)
    n_accept = n_reject = n_eval = 0
    err_prev = 1.0
    k = [None] * 7
    k[0] = fun(t, y)
    n_eval += 1
    safety, beta, alpha = 0.9, 0.08, 0.7 / 5.0
    cp_idx = 0

    while t < t1 - 1e-12 * max(1.0, abs(t1)):
        hit_cp = False
        h = min(h_free, max_step, t1 - t)
        if cp_idx < len(cps) and t + h >= cps[cp_idx] - 1e-14:
            h = cps[cp_idx] - t
            hit_cp = True
            # roundoff accumulation can leave a negligible gap; snap to the
            # checkpoint instead of forcing a degenerate step
            if h < 1e-12 * max(1.0, abs(t)):
                t = cps[cp_idx]
                out_t.append(t)
                out_y.append(y.copy())
                cp_idx += 1
                continue
        if h < 1e-14 * max(1.0, abs(t)):
            raise StepSizeUnderflowError(t, h)

        for i in range(1, 7):
            yi = y + h * sum(_DP_A[i][j] * k[j] for j in range(i))
            k[i] = fun(t + _DP_C[i] * h, yi)
        n_eval += 6
        y_new = y + h * sum(_DP_B5[i] * k[i] for i in range(7) if _DP_B5[i] != 0.0)
        err_vec = h * sum(_DP_ERR[i] * k[i] for i in range(7) if _DP_ERR[i] != 0.0)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = float(np.sqrt(np.mean((np.abs(err_vec) / scale) ** 2)))

        if err <= 1.0:
            t_new = t + h
            err = max(err, 1e-10)
            factor = min(5.0, max(0.2, safety * err ** (-alpha) * err_prev ** beta))
            err_prev = err
            t, y = t_new, y_new
            k[0] = k[6]  # FSAL
            n_accept += 1
            if on_accept is not None:
                on_accept(t, y)
            if hit_cp:
                out_t.append(t)
                out_y.append(y.copy())
                cp_idx += 1
                # a clamped landing says nothing about the natural step scale
                h_free = max(h_free, h * factor)
            else:
                h_free = h * factor
        else:
            n_reject += 1
            h_free = h * min(1.0, max(0.2, safety * err ** (-0.2)))

    if not out_t or abs(out_t[-1] - t1) > 1e-12:
        out_t.append(t)
        out_y.append(y.copy())
    return np.array(out_t), out_y, StepStats(n_accept, n_reject, n_eval)


def integrate(
    gen_of_t: Callable[[float], LindbladGenerator],
    rho0: np.ndarray,
    tau_span: tuple[float, float],
    rtol: float = 1e-9,
    atol: float = 1e-12,
    max_step: float = 0.1,
    checkpoints: Sequence[float] | None = None,
) -> Trajectory:
    """Integrate d(rho)/d(tau) = L_tau[rho] with adaptive error control.

    The initial state must be a valid density matrix; Hermiticity, trace and
    positivity are re-checked at every accepted step and a violation beyond
    100x the standing tolerances aborts the run (states are never projected
    back, so integrator bugs cannot hide).
    """
    rho0 = np.asarray(rho0, dtype=complex)
    validate_density_matrix(rho0)
    dim = rho0.shape[0]
    t0, t1 = float(tau_span[0]), float(tau_span[1])

    def fun(tau, y):
        return lindblad_rhs(y.reshape(dim, dim), gen_of_t(tau)).reshape(-1)

    def watch(tau, y):
        rho = y.reshape(dim, dim)
        herm = frobenius(rho - dagger(rho))
        if herm > 100 * HERMITICITY_TOL:
            raise InvariantViolationError(tau, "hermiticity", herm)
        tr_dev = abs(np.trace(rho) - 1.0)
        if tr_dev > 100 * TRACE_TOL:
            raise InvariantViolationError(tau, "trace", tr_dev)
        min_eig = float(np.linalg.eigvalsh(0.5 * (rho + dagger(rho))).min())
        if min_eig < -100 * POSITIVITY_TOL:
            raise InvariantViolationError(tau, "positivity", min_eig)

    times, states, stats = adaptive_rk45(
        fun,
        rho0.reshape(-1),
        t0,
        t1,
        rtol=rtol,
        atol=atol,
        max_step=max_step,
        checkpoints=checkpoints,
        on_accept=watch,
    )
    return Trajectory(times, [y.reshape(dim, dim) for y in states], stats)


def vectorize(gen: LindbladGenerator) -> np.ndarray:
    """Superoperator matrix S with S vec(rho) = vec(lindblad_rhs(rho, gen))."""
    dim = gen.dim
    eye = np.eye(dim, dtype=complex)
    sup = np.zeros((dim * dim, dim * dim), dtype=complex)
    if gen.hamiltonian is not None:
        h = gen.hamiltonian
        sup += -1j * gen.hamiltonian_prefactor * (np.kron(h, eye) - np.kron(eye, h.T))
    for jump in gen.jumps:
        jdj = dagger(jump) @ jump
        sup += np.kron(jump, jump.conj())
        sup -= 0.5 * (np.kron(jdj, eye) + np.kron(eye, jdj.T))
    return sup


def apply_superoperator(sup: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Apply a vectorized superoperator to a matrix."""
    dim = rho.shape[0]
    return (sup @ rho.reshape(-1)).reshape(dim, dim)


def spectral_gap(sup: np.ndarray, kernel_tol: float = KERNEL_TOL) -> float | None:
    """Dissipative gap min(-Re lambda) over nonzero eigenvalues.

    Returns None for a gapless spectrum (every eigenvalue inside the kernel
    threshold, or a nonzero eigenvalue with decay rate below 1e-8).
    """
    lam = np.linalg.eigvals(sup)
    scale = max(float(np.abs(lam).max()), 1.0)
    nonzero = lam[np.abs(lam) > kernel_tol * scale]
    if nonzero.size == 0:
        return None
    gap = float(-nonzero.real.max())
    if gap < 1e-8:
        return None
    return gap


def asymptotic_channel(sup: np.ndarray, kernel_tol: float = KERNEL_TOL) -> np.ndarray:
    """Infinite-time limit R = lim e^(t S): spectral projector onto ker(S).

    Requires every nonzero eigenvalue to decay (gapped dynamics); rotating or
    marginal modes make the limit undefined and are rejected.
    """
    lam, vr = np.linalg.eig(sup)
    scale = max(float(np.abs(lam).max()), 1.0)
    in_kernel = np.abs(lam) <= kernel_tol * scale
    if not np.all(lam[~in_kernel].real < -1e-8):
        worst = lam[~in_kernel][np.argmax(lam[~in_kernel].real)]
        raise GaplessLindbladianError(
            f"non-decaying eigenvalue {worst:.3g}; asymptotic channel undefined"
        )
    proj = np.zeros(lam.shape[0])
    proj[in_kernel] = 1.0
    r = (vr * proj) @ np.linalg.inv(vr)
    defect = frobenius(r @ r - r)
    if defect > 1e-8:
        raise GaplessLindbladianError(f"spectral projector not idempotent ({defect:.3g})")
    return r


def choi_matrix(sup: np.ndarray) -> np.ndarray:
    """Choi matrix of a superoperator: the reshuffle C[(a,c),(b,d)] = S[(a,b),(c,d)].

    Equivalently C = sum_{ij} E_ij (x) S[E_ij] in row-major index grouping;
    Hermitian and positive semidefinite exactly when S is completely positive.
    """
    n2 = sup.shape[0]
    dim = int(round(np.sqrt(n2)))
    return sup.reshape(dim, dim, dim, dim).transpose(0, 2, 1, 3).reshape(n2, n2)


def kraus_from_channel(
    sup: np.ndarray,
    cp_tol: float = 1e-8,
    weight_tol: float = 1e-10,
) -> list[np.ndarray]:
    """Kraus operators of a completely positive trace-preserving superoperator.

    Eigendecomposition of the Choi matrix; eigenvalues below ``weight_tol``
    are discarded.  Raises ValueError when the Choi matrix fails positivity
    beyond ``cp_tol`` (reporting the offending eigenvalue) and when the
    resulting set is not trace preserving.
    """
    choi = choi_matrix(sup)
    herm_defect = frobenius(choi - dagger(choi))
    if herm_defect > cp_tol * max(frobenius(choi), 1.0):
        raise ValueError(f"Choi matrix not Hermitian (defect {herm_defect:.3g})")
    w, v = np.linalg.eigh(0.5 * (choi + dagger(choi)))
    if w[0] < -cp_tol:
        raise ValueError(f"channel not completely positive: Choi eigenvalue {w[0]:.3g}")
    dim = int(round(np.sqrt(sup.shape[0])))
    ops = [
        np.sqrt(wk) * v[:, i].reshape(dim, dim)
        for i, wk in enumerate(w)
        if wk > weight_tol
    ]
    total = sum(dagger(m) @ m for m in ops)
    norm_defect = frobenius(total - np.eye(dim))
    if norm_defect > 1e-8:
        raise ValueError(f"Kraus set not trace preserving (defect {norm_defect:.3g})")
    return ops


def dark_block_kraus(
    kraus: list[np.ndarray],
    projector: np.ndarray,
) -> list[np.ndarray]:
    """Rotate a Kraus set so the dark-space block concentrates in one operator.

    A Kraus decomposition is unique only up to a unitary mixing N_i = sum_j
    W_ij M_j, which leaves the channel untouched.  For a channel acting as
    the identity on the subspace of ``projector``, each block P M_i P is
    proportional to P; this picks the mixing that moves all of that weight
    (phase-fixed to +P) into the first operator.
    """
    p0 = np.asarray(projector, dtype=complex)
    blocks = [p0 @ m @ p0 for m in kraus]
    gram = np.array([[np.trace(dagger(a) @ b) for b in blocks] for a in blocks])
    w, u = np.linalg.eigh(0.5 * (gram + dagger(gram)))
    # descending eigenvalues; columns of u mix the original operators
    order = np.argsort(w)[::-1]
    u = u[:, order]
    rotated = [sum(u[j, i] * kraus[j] for j in range(len(kraus))) for i in range(len(kraus))]
    # fix the phase of the leading operator so its dark block is +P
    lead_block = p0 @ rotated[0] @ p0
    phase = np.trace(lead_block)
    if abs(phase) > 1e-12:
        rotated[0] = rotated[0] * (abs(phase) / phase)
    return rotated
