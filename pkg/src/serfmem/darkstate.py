"""Storage: the four-level quasi-dark state and the light -> spin map.

Basis ordering is (|g>, |r>, |e>, |p>): |g> = |F=4,m=4>, |r> = |F=4,m=3>,
|e> the resonant excited state and |p> the off-resonant one.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .params import CesiumParams

G, R, E, P = range(4)
ETA_SOFT_LIMIT = 0.1


class EigenSelectionError(RuntimeError):
    """The least-lossy eigenvector could not be selected unambiguously."""


class WeakSignalWarning(UserWarning):
    """Signal amplitude outside the perturbative ``eta << 1`` regime."""


@dataclass(frozen=True)
class LightState:
    """Signal+control polarization, ``E = E_c (z + i eta_l e^{i phi_l} y)``."""

    eta_l: float
    phi_l: float
    control_amplitude: float = 1.0

    def __post_init__(self):
        if self.eta_l < 0:
            raise ValueError(f"eta_l must be non-negative, got {self.eta_l!r}")
        if not self.control_amplitude > 0:
            raise ValueError("control_amplitude must be positive")
        object.__setattr__(self, "phi_l", float(self.phi_l) % (2 * math.pi))
        if self.eta_l > ETA_SOFT_LIMIT:
            warnings.warn(f"eta_l={self.eta_l} is outside the weak-signal regime",
                          WeakSignalWarning, stacklevel=2)

    @property
    def field(self) -> np.ndarray:
        """Transverse field vector over (y, z)."""
        return self.control_amplitude * np.array(
            [1j * self.eta_l * np.exp(1j * self.phi_l), 1.0])


@dataclass
class AtomicState4:
    """Normalized amplitudes over (|g>, |r>, |e>, |p>).

    ``eigenvalue`` is set when the state came out of a diagonalization.
    """

    amplitudes: np.ndarray
    eigenvalue: complex | None = field(default=None)

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(4)
        norm = np.linalg.norm(amps)
        if norm == 0:
            raise ValueError("zero state vector")
        self.amplitudes = amps / norm

    def __getitem__(self, idx):
        return self.amplitudes[idx]

    def overlap(self, other: "AtomicState4") -> float:
        """|<self|other>|^2."""
        return float(abs(np.vdot(self.amplitudes, other.amplitudes)) ** 2)

    @property
    def excited_population(self) -> float:
        return float(abs(self.amplitudes[E]) ** 2 + abs(self.amplitudes[P]) ** 2)


@dataclass(frozen=True)
class BlochOrientation:
    """Collective spin tilt: polar ``eta_a`` and azimuth ``phi_a``.

    The equivalent quadratures are ``s_x = eta_a cos(phi_a)/2``,
    ``s_y = eta_a sin(phi_a)/2`` and ``s_z = 1/2``.
    """

    eta_a: float
    phi_a: float

    @property
    def s_x(self) -> float:
        return 0.5 * self.eta_a * math.cos(self.phi_a)

    @property
    def s_y(self) -> float:
        return 0.5 * self.eta_a * math.sin(self.phi_a)

    @property
    def s_z(self) -> float:
        return 0.5

    @property
    def spin(self) -> tuple[float, float, float]:
        return self.s_x, self.s_y, self.s_z

    @classmethod
    def from_spin(cls, s_x: float, s_y: float, s_z: float = 0.5) -> "BlochOrientation":
        """Build from transverse quadratures; the polar angle is sqrt(sx^2+sy^2)/s_z."""
        return cls(eta_a=math.hypot(s_x, s_y) / s_z, phi_a=math.atan2(s_y, s_x))


def build_hamiltonian(omega_c: float, omega_s: complex, params: CesiumParams) -> np.ndarray:
    """Non-Hermitian 4x4 Hamiltonian (rad/s) of the storage Lambda system.

    H0 puts ``-i Gamma`` on |e> and ``Delta - i Gamma`` on |p>. The coupling
    matrix elements are written in the absorption convention ``<excited|V|ground>``
    with the control-driven elements carrying a minus sign, which makes the
    ideal dark state ``|g> + (Omega_s/Omega_c)|r>``.
    """
    H = np.zeros((4, 4), dtype=complex)
    H[E, E] = -1j * params.gamma
    H[P, P] = params.delta - 1j * params.gamma

    H[E, G] = omega_s
    H[E, R] = -omega_c
    H[P, G] = -params.a_cs * omega_c
    H[P, R] = params.b_cs * omega_s
    for exc, gnd in ((E, G), (E, R), (P, G), (P, R)):
        H[gnd, exc] = np.conj(H[exc, gnd])
    return H


def quasi_dark_state_numeric(H: np.ndarray, degeneracy_rtol: float = 1e-12) -> AtomicState4:
    """Eigenvector of ``H`` with the smallest loss rate |Im lambda|.

    The global phase is fixed so that the |g> amplitude is real and positive.
    """
    try:
        evals, evecs = np.linalg.eig(H)
    except np.linalg.LinAlgError as exc:
        raise EigenSelectionError(f"eigensolver failed: {exc}") from exc
    loss = np.abs(evals.imag)
    order = np.argsort(loss)
    best, runner_up = order[0], order[1]
    scale = max(np.max(np.abs(evals)), np.finfo(float).tiny)
    if abs(evals[best] - evals[runner_up]) <= degeneracy_rtol * scale:
        raise EigenSelectionError(
            f"degenerate least-loss eigenvalues {evals[best]!r}, {evals[runner_up]!r}")
    vec = evecs[:, best]
    if abs(vec[G]) > 0:
        vec = vec * np.exp(-1j * np.angle(vec[G]))
    return AtomicState4(vec, eigenvalue=complex(evals[best]))


def dark_state_ratio(eta_l: float, phi_l: float, alpha: float) -> complex:
    """First-order amplitude ratio <r|psi>/<g|psi> of the quasi-dark state."""
    theta = phi_l - alpha
    return (math.sqrt(2.0) * eta_l * np.exp(-3j * alpha)
            * (np.exp(1j * theta) - 1j * alpha * np.exp(-1j * theta)))


def quasi_dark_state_analytic(eta_l: float, phi_l: float, alpha: float) -> AtomicState4:
    """Quasi-dark state to first order in eta_l and alpha, with no excited admixture."""
    if eta_l < 0 or alpha < 0:
        raise ValueError("eta_l and alpha must be non-negative")
    return AtomicState4(np.array([1.0, dark_state_ratio(eta_l, phi_l, alpha), 0.0, 0.0]))


def continuous_arctan_tan(u, ratio):
    """Branch-continuous ``arctan(ratio * tan(u))`` equal to ``u`` at ratio = 1.

    Evaluated as ``u`` plus a bounded correction, so it is smooth through the
    tangent poles and strictly increasing in ``u`` for ``ratio > 0``.
    """
    u = np.asarray(u, dtype=float)
    s, c = np.sin(u), np.cos(u)
    out = u + np.arctan2((ratio - 1.0) * s * c, c * c + ratio * s * s)
    return out if out.ndim else float(out)


def _check_alpha(alpha: float):
    if not abs(alpha) < 1:
        raise ValueError(f"|alpha| must be < 1, got {alpha!r}")


def storage_map(eta_l, phi_l, alpha: float, first_order: bool = False):
    """Map the light state (eta_l, phi_l) onto the stored spin tilt (eta_a, phi_a).

    The azimuth ``phi_a`` is returned on the continuous branch (equal to
    ``phi_l`` at alpha = 0) and may leave [0, 2*pi). The amplitude is the exact
    modulus of the quasi-dark-state ratio, ``eta_l*sqrt(1 + alpha^2 - 2 alpha
    sin(2(phi_l - alpha)))``, so the image of a circle is an exact ellipse with
    semi-axes ``eta_l(1 +- alpha)``. ``first_order=True`` drops the alpha^2 term.

    Accepts scalars or arrays for ``eta_l`` and ``phi_l``.
    """
    _check_alpha(alpha)
    phi_l = np.asarray(phi_l, dtype=float)
    eta_l = np.asarray(eta_l, dtype=float)
    quad = 0.0 if first_order else alpha**2
    eta_a = eta_l * np.sqrt(1.0 + quad - 2.0 * alpha * np.sin(2.0 * (phi_l - alpha)))
    ratio = (1.0 - alpha) / (1.0 + alpha)
    phi_a = -math.pi / 4 - 3 * alpha + continuous_arctan_tan(phi_l + math.pi / 4 - alpha, ratio)
    if np.ndim(eta_a) == 0 and np.ndim(phi_a) == 0:
        return BlochOrientation(float(eta_a), float(phi_a))
    return eta_a, np.asarray(phi_a)


def bloch_from_state(state: AtomicState4) -> BlochOrientation:
    """Read the spin tilt off a state via ``<r|psi>/<g|psi> = sqrt(2) eta_a e^{i phi_a}``."""
    amp_g = state.amplitudes[G]
    if abs(amp_g) < 1e-300:
        raise ValueError("state has no |g> amplitude; spin tilt undefined")
    z = state.amplitudes[R] / amp_g / math.sqrt(2.0)
    return BlochOrientation(float(abs(z)), float(np.angle(z)))


def store(light: LightState, params: CesiumParams, omega_c_over_gamma: float = 1e-2) -> AtomicState4:
    """Quasi-dark state of the full Hamiltonian for a given light state.

    ``light.control_amplitude`` is ignored; the control Rabi frequency is set to
    ``omega_c_over_gamma * Gamma``.
    """
    omega_c = omega_c_over_gamma * params.gamma
    omega_s = math.sqrt(2.0) * omega_c * light.eta_l * np.exp(1j * light.phi_l)
    return quasi_dark_state_numeric(build_hamiltonian(omega_c, omega_s, params))
