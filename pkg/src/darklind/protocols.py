"""Concrete time-dependent control families.

A protocol bundles the rotating-frame jump operator with the cyclic unitary
path that drags its dark space around, parameterized by the protocol phase
s in [0, 1].  For half-integer spins a full 2*pi winding returns the unitary
only up to a global sign, so cyclicity is enforced projectively.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .linalg import dagger, frobenius

__all__ = [
    "spin_operators",
    "PathSpec",
    "linear_path",
    "smoothstep_path",
    "fourier_path",
    "Protocol",
    "spin32_protocol",
    "custom_protocol",
    "lab_jump",
]

_PHASE_SAMPLES = 64  # construction-time grid for unitarity/cyclicity checks


def spin_operators(two_j: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Spin operators (S_x, S_y, S_z) for spin j = two_j / 2.

    Standard basis ordered by descending magnetic quantum number, so
    S_z = diag(j, j-1, ..., -j); satisfies [S_x, S_y] = i S_z cyclically.
    """
    if two_j < 1:
        raise ValueError("two_j must be >= 1")
    j = two_j / 2.0
    dim = two_j + 1
    m = j - np.arange(dim)
    sz = np.diag(m).astype(complex)
    raising = np.zeros((dim, dim), dtype=complex)
    for k in range(dim - 1):
        raising[k, k + 1] = math.sqrt(j * (j + 1) - m[k + 1] * (m[k + 1] + 1))
    lowering = dagger(raising)
    sx = 0.5 * (raising + lowering)
    sy = -0.5j * (raising - lowering)
    return sx, sy, sz


@dataclass(frozen=True)
class PathSpec:
    """Closed path (theta(s), phi(s)) on the control sphere.

    The angle functions take the protocol phase s and return radians; their
    derivatives are with respect to s.  Over one cycle each angle must advance
    by an integer number of full turns.
    """

    theta: Callable[[float], float]
    phi: Callable[[float], float]
    dtheta: Callable[[float], float]
    dphi: Callable[[float], float]
    winding: tuple[int, int]
    descriptor: dict = field(default_factory=dict)

    def __post_init__(self):
        m_theta, m_phi = self.winding
        if abs(self.theta(1.0) - self.theta(0.0) - 2 * math.pi * m_theta) > 1e-10:
            raise ValueError("theta(1) - theta(0) is not 2*pi times the declared winding")
        if abs(self.phi(1.0) - self.phi(0.0) - 2 * math.pi * m_phi) > 1e-10:
            raise ValueError("phi(1) - phi(0) is not 2*pi times the declared winding")


def linear_path(m_theta: int = 1, m_phi: int = 0, theta0: float = 0.0, phi0: float = 0.0) -> PathSpec:
    """Uniform ramp: theta = theta0 + 2*pi*m_theta*s, likewise phi."""
    wt, wp = 2 * math.pi * m_theta, 2 * math.pi * m_phi
    return PathSpec(
        theta=lambda s: theta0 + wt * s,
        phi=lambda s: phi0 + wp * s,
        dtheta=lambda s: wt,
        dphi=lambda s: wp,
        winding=(m_theta, m_phi),
        descriptor={"family": "linear", "m_theta": m_theta, "m_phi": m_phi,
                    "theta0": theta0, "phi0": phi0},
    )


def smoothstep_path(m_theta: int = 1, m_phi: int = 0, theta0: float = 0.0, phi0: float = 0.0) -> PathSpec:
    """Windings traversed with the cubic smoothstep profile 3s^2 - 2s^3."""
    wt, wp = 2 * math.pi * m_theta, 2 * math.pi * m_phi

    def ramp(s):
        return s * s * (3.0 - 2.0 * s)

    def dramp(s):
        return 6.0 * s * (1.0 - s)

    return PathSpec(
        theta=lambda s: theta0 + wt * ramp(s),
        phi=lambda s: phi0 + wp * ramp(s),
        dtheta=lambda s: wt * dramp(s),
        dphi=lambda s: wp * dramp(s),
        winding=(m_theta, m_phi),
        descriptor={"family": "smoothstep", "m_theta": m_theta, "m_phi": m_phi,
                    "theta0": theta0, "phi0": phi0},
    )


def fourier_path(
    m_theta: int = 0,
    m_phi: int = 0,
    theta0: float = 0.0,
    phi0: float = 0.0,
    theta_knots: Sequence[float] = (),
    phi_knots: Sequence[float] = (),
) -> PathSpec:
    """Winding plus periodic Fourier wiggles sum_k a_k sin(2*pi*k*s).

    The sine series vanishes at both endpoints, so the declared windings stay
    exact whatever the knot amplitudes.
    """
    wt, wp = 2 * math.pi * m_theta, 2 * math.pi * m_phi
    tk = tuple(float(a) for a in theta_knots)
    pk = tuple(float(a) for a in phi_knots)

    def series(knots, s):
        return sum(a * math.sin(2 * math.pi * (k + 1) * s) for k, a in enumerate(knots))

    def dseries(knots, s):
        return sum(
            a * 2 * math.pi * (k + 1) * math.cos(2 * math.pi * (k + 1) * s)
            for k, a in enumerate(knots)
        )

    return PathSpec(
        theta=lambda s: theta0 + wt * s + series(tk, s),
        phi=lambda s: phi0 + wp * s + series(pk, s),
        dtheta=lambda s: wt + dseries(tk, s),
        dphi=lambda s: wp + dseries(pk, s),
        winding=(m_theta, m_phi),
        descriptor={"family": "fourier", "m_theta": m_theta, "m_phi": m_phi,
                    "theta0": theta0, "phi0": phi0,
                    "theta_knots": list(tk), "phi_knots": list(pk)},
    )


@dataclass(frozen=True)
class Protocol:
    """Rotating-frame jump operator plus the cyclic unitary control path.

    ``U(s)`` rotates the lab-frame jump, L_lab(s) = U(s)^dag L_rot U(s); the
    path is cyclic up to a global phase (exactly -1 can occur for half-integer
    spin windings, which no observable sees).  ``dU``, when provided, is the
    analytic phase derivative; otherwise a Richardson-checked central
    difference is used by consumers.
    """

    dim: int
    L_rot: np.ndarray
    U: Callable[[float], np.ndarray]
    dU: Callable[[float], np.ndarray] | None
    gammaT: float
    descriptor: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.gammaT <= 0:
            raise ValueError("gammaT must be positive")
        if self.L_rot.shape != (self.dim, self.dim):
            raise ValueError("L_rot shape does not match protocol dimension")
        eye = np.eye(self.dim)
        if frobenius(self.U(0.0) - eye) > 1e-10:
            raise ValueError("U(0) must be the identity")
        u1 = self.U(1.0)
        phase = np.trace(u1) / self.dim
        if abs(abs(phase) - 1.0) > 1e-10 or frobenius(u1 - phase * eye) > 1e-10:
            raise ValueError("path is not cyclic: U(1) is not the identity up to a phase")
        for s in np.linspace(0.0, 1.0, _PHASE_SAMPLES):
            u = self.U(float(s))
            if frobenius(dagger(u) @ u - eye) > 1e-9:
                raise ValueError(f"U({s}) is not unitary")

    def with_gammaT(self, gammaT: float) -> "Protocol":
        """Same control path at a different cycle duration."""
        return replace(self, gammaT=gammaT)


def _exp_factory(generator: np.ndarray) -> Callable[[float], np.ndarray]:
    """Cached eigenbasis for exp(i * angle * G) with G Hermitian."""
    w, v = np.linalg.eigh(generator)
    vd = dagger(v)

    def rot(angle: float) -> np.ndarray:
        return (v * np.exp(1j * angle * w)) @ vd

    return rot


def spin32_protocol(path: PathSpec, gammaT: float) -> Protocol:
    """Spin-3/2 system with jump operator S_x (S_z^2 - 1/4).

    The two S_z = +-1/2 states span the dark space; the control unitary is
    U(s) = exp(i theta S_y) exp(i phi S_z) with (theta, phi) from ``path``.
    The phase derivative dU is analytic.
    """
    sx, sy, sz = spin_operators(3)
    l_rot = sx @ (sz @ sz - 0.25 * np.eye(4))
    rot_y = _exp_factory(sy)
    rot_z = _exp_factory(sz)

    def u_of(s: float) -> np.ndarray:
        return rot_y(path.theta(s)) @ rot_z(path.phi(s))

    def du_of(s: float) -> np.ndarray:
        uy, uz = rot_y(path.theta(s)), rot_z(path.phi(s))
        return (
            1j * path.dtheta(s) * (sy @ uy) @ uz
            + 1j * path.dphi(s) * uy @ (sz @ uz)
        )

    return Protocol(
        dim=4,
        L_rot=l_rot,
        U=u_of,
        dU=du_of,
        gammaT=float(gammaT),
        descriptor={"family": "spin32", "path": dict(path.descriptor), "gammaT": float(gammaT)},
    )


def custom_protocol(
    generators: Sequence[np.ndarray],
    angles: Sequence[Callable[[float], float]],
    L_rot: np.ndarray,
    gammaT: float,
    dangles: Sequence[Callable[[float], float]] | None = None,
    descriptor: dict | None = None,
) -> Protocol:
    """Product-of-exponentials path U(s) = prod_k exp(i alpha_k(s) G_k).

    Generators must be Hermitian.  With ``dangles`` supplied the phase
    derivative is analytic; otherwise consumers fall back to finite
    differences.  Construction rejects non-cyclic paths.
    """
    gens = [np.asarray(g, dtype=complex) for g in generators]
    if len(gens) != len(angles):
        raise ValueError("need one angle function per generator")
    for g in gens:
        if frobenius(g - dagger(g)) > 1e-10 * max(frobenius(g), 1.0):
            raise ValueError("generators must be Hermitian")
    dim = gens[0].shape[0] if gens else np.asarray(L_rot).shape[0]
    rots = [_exp_factory(g) for g in gens]

    def u_of(s: float) -> np.ndarray:
        u = np.eye(dim, dtype=complex)
        for rot, ang in zip(rots, angles):
            u = u @ rot(ang(s))
        return u

    du_of = None
    if dangles is not None:
        if len(dangles) != len(angles):
            raise ValueError("need one derivative per angle function")

        def du_of(s: float) -> np.ndarray:  # noqa: F811
            factors = [rot(ang(s)) for rot, ang in zip(rots, angles)]
            total = np.zeros((dim, dim), dtype=complex)
            for k in range(len(factors)):
                term = np.eye(dim, dtype=complex)
                for i, f in enumerate(factors):
                    piece = 1j * dangles[k](s) * (gens[k] @ f) if i == k else f
                    term = term @ piece
                total += term
            return total

    return Protocol(
        dim=dim,
        L_rot=np.asarray(L_rot, dtype=complex),
        U=u_of,
        dU=du_of,
        gammaT=float(gammaT),
        descriptor=descriptor or {"family": "custom", "n_generators": len(gens),
                                  "gammaT": float(gammaT)},
    )


def lab_jump(protocol: Protocol, s: float) -> np.ndarray:
    """Lab-frame jump operator U(s)^dag L_rot U(s)."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"phase {s} outside [0, 1]")
    u = protocol.U(s)
    return dagger(u) @ protocol.L_rot @ u
