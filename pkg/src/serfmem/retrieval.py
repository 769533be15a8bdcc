"""Retrieval: susceptibility of the stored spins, least-lossy optical mode, Stokes vectors."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .darkstate import (BlochOrientation, EigenSelectionError, LightState, _check_alpha,
                        continuous_arctan_tan)
from .params import CesiumParams

Y, Z = 0, 1


@dataclass(frozen=True)
class SusceptibilityTensor:
    """Mean transverse susceptibility over the (y, z) polarization basis.

    ``matrix`` includes the overall ``i d^2/Gamma`` prefactor.
    """

    matrix: np.ndarray
    bloch: BlochOrientation
    params: CesiumParams

    @property
    def prefactor(self) -> complex:
        return 1j * self.params.d_cs**2 / self.params.gamma

    @property
    def reduced(self) -> np.ndarray:
        """The tensor with the prefactor divided out."""
        return self.matrix / self.prefactor


@dataclass(frozen=True)
class StokesVector:
    """Stokes parameters; S1 = |E_z|^2 - |E_y|^2, S2 + i S3 = 2 E_z* E_y."""

    s0: float
    s1: float
    s2: float
    s3: float

    @property
    def normalized(self) -> tuple[float, float, float]:
        return self.s1 / self.s0, self.s2 / self.s0, self.s3 / self.s0


def susceptibility_tensor(bloch: BlochOrientation, params: CesiumParams) -> SusceptibilityTensor:
    """Mean transverse susceptibility of atoms holding the spin tilt ``bloch``.

    The lower-right entry is ``eta_a - (i/2) a^2 Gamma/Delta`` with ``eta_a``
    to the first power, as printed in the source derivation. A population
    term there would scale as eta_a^2; that reading is not adopted here. The
    visible effect is an O(eta_a) relative shift of the retrieved mode.
    """
    eta, phi = bloch.eta_a, bloch.phi_a
    gd = params.gamma_over_delta
    a, b = params.a_cs, params.b_cs
    ep, em = np.exp(1j * phi), np.exp(-1j * phi)
    reduced = np.array([
        [1 - 2j * b**2 * gd * eta, -1j * eta * (ep - 1j * a * b * gd * em)],
        [1j * eta * (em - 1j * a * b * gd * ep), eta - 0.5j * a**2 * gd],
    ], dtype=complex)
    prefactor = 1j * params.d_cs**2 / params.gamma
    return SusceptibilityTensor(prefactor * reduced, bloch, params)


def retrieved_field_numeric(chi: SusceptibilityTensor, degeneracy_rtol: float = 1e-12) -> LightState:
    """Least-decaying eigenmode of ``chi`` (smallest Im eigenvalue) as a light state.

    The eigenvector is gauged to unit control component; the signal component
    is then ``i eta e^{i phi}``.
    """
    # prefactor only rescales eigenvalues; d^2 ~ 1e-59 would wreck the tolerances
    m = chi.reduced * 1j
    evals, evecs = np.linalg.eig(m)
    order = np.argsort(evals.imag)
    best, other = order[0], order[1]
    scale = max(np.max(np.abs(evals)), np.finfo(float).tiny)
    if abs(evals[best] - evals[other]) <= degeneracy_rtol * scale:
        raise EigenSelectionError("degenerate susceptibility eigenvalues")
    vec = evecs[:, best]
    if abs(vec[Z]) == 0:
        raise EigenSelectionError("least-lossy mode has no control component")
    z = vec[Y] / vec[Z] / 1j
    return LightState(float(abs(z)), float(np.angle(z)))


def retrieval_map(eta_a, phi_a, alpha: float, first_order: bool = False):
    """Map the stored spin tilt (eta_a, phi_a) onto the retrieved light (eta_out, phi_out).

    Same conventions as :func:`serfmem.darkstate.storage_map`: exact ellipse
    amplitude unless ``first_order`` is set, continuous phase branch equal to
    ``phi_a`` at alpha = 0. Returns a tuple of floats or arrays.
    """
    _check_alpha(alpha)
    eta_a = np.asarray(eta_a, dtype=float)
    phi_a = np.asarray(phi_a, dtype=float)
    quad = 0.0 if first_order else alpha**2
    eta_out = eta_a * np.sqrt(1.0 + quad - 2.0 * alpha * np.sin(2.0 * phi_a))
    ratio = (1.0 + alpha) / (1.0 - alpha)
    phi_out = math.pi / 4 - 2 * alpha + continuous_arctan_tan(phi_a - math.pi / 4, ratio)
    if np.ndim(eta_out) == 0 and np.ndim(phi_out) == 0:
        return float(eta_out), float(phi_out)
    return eta_out, np.asarray(phi_out)


def retrieval_ratio(eta_a: float, phi_a: float, alpha: float) -> complex:
    """First-order signal/control ratio ``E_y/E_z`` of the retrieved mode."""
    return (1j * eta_a * np.exp(-2j * alpha)
            * (np.exp(1j * phi_a) - 1j * alpha * np.exp(-1j * phi_a)))


def stokes_from_field(e_y: complex, e_z: complex) -> StokesVector:
    cross = np.conj(e_z) * e_y
    iy, iz = abs(e_y) ** 2, abs(e_z) ** 2
    return StokesVector(float(iz + iy), float(iz - iy), float(2 * cross.real), float(2 * cross.imag))


def stokes_from_light(light: LightState) -> StokesVector:
    e_y, e_z = light.field
    return stokes_from_field(e_y, e_z)


def light_from_stokes(stokes: StokesVector) -> LightState:
    """Invert :func:`stokes_from_light` for a fully polarized field.

    Requires a nonzero control component (S0 + S1 > 0).
    """
    iz = 0.5 * (stokes.s0 + stokes.s1)
    if iz <= 0:
        raise ValueError("no control component; ratio undefined")
    ratio = complex(stokes.s2, stokes.s3) / (2 * iz)  # E_y / E_z
    z = ratio / 1j
    return LightState(float(abs(z)), float(np.angle(z)) % (2 * math.pi), math.sqrt(iz))
