"""Physical constants of the cesium light-storage model and their config format.

All angular frequencies are held in rad/s. The config file quotes them in Hz
and the conversion happens once, at parse time.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from scipy.constants import e as ELEMENTARY_CHARGE
from scipy.constants import hbar as HBAR
from scipy.constants import physical_constants

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

TWO_PI = 2.0 * math.pi
BOHR_RADIUS = physical_constants["Bohr radius"][0]


class ConfigError(ValueError):
    """Raised for malformed or out-of-range configuration input."""


def _default_dipole() -> float:
    return 2.6 * math.sqrt(7.0) / 4.0 * ELEMENTARY_CHARGE * BOHR_RADIUS


@dataclass(frozen=True)
class CesiumParams:
    """Constants of the four-level storage model.

    Attributes
    ----------
    delta : float
        Excited-level hyperfine splitting (rad/s).
    gamma : float
        Doppler half-linewidth of the optical transition (rad/s).
    f_cs : float
        Clebsch-Gordan factor setting the ellipticity ``alpha = f_cs*gamma/delta``.
    a_cs, b_cs : float
        Coupling ratios of the off-resonant Raman path.
    d_cs : float
        Transition dipole moment (C m).
    nuclear_spin : float
        Nuclear spin I.
    p_coeff, q_coeff : float
        Electron-flip and nuclear-flip weights of the |m=3> orientation state.
    alpha_se : float
        Spin-exchange rate coefficient (cm^3/s).
    """

    delta: float = 1100e6 * TWO_PI
    gamma: float = 124e6 * TWO_PI
    f_cs: float = 0.58
    a_cs: float = 4.0 / math.sqrt(7.0)
    b_cs: float = 1.0 / math.sqrt(7.0)
    d_cs: float = field(default_factory=_default_dipole)
    nuclear_spin: float = 3.5
    p_coeff: float = math.sqrt(1.0 / 8.0)
    q_coeff: float = math.sqrt(7.0 / 8.0)
    alpha_se: float = 6.5e-10

    def __post_init__(self):
        for name in ("delta", "gamma", "alpha_se"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be strictly positive, got {getattr(self, name)!r}")
        if abs(self.p_coeff**2 + self.q_coeff**2 - 1.0) > 1e-12:
            raise ConfigError("p_coeff**2 + q_coeff**2 must equal 1")
        if self.nuclear_spin <= 0 or (2 * self.nuclear_spin) % 1:
            raise ConfigError(f"nuclear_spin must be a positive half-integer, got {self.nuclear_spin!r}")

    @property
    def gamma_over_delta(self) -> float:
        return self.gamma / self.delta

    def with_gamma_over_delta(self, ratio: float) -> "CesiumParams":
        """Copy with ``delta`` rescaled so that gamma/delta equals ``ratio``."""
        return replace(self, delta=self.gamma / ratio)


def alpha_ellipticity(params: CesiumParams) -> float:
    """Ellipticity parameter f*Gamma/Delta of the light-spin mapping."""
    return params.f_cs * params.gamma / params.delta


def rabi_frequencies(control_amplitude: float, eta_l: float, phi_l: float,
                     params: CesiumParams) -> tuple[float, complex]:
    """Control and signal Rabi frequencies (rad/s) for a field ``E_c (z + i eta e^{i phi} y)``.

    ``control_amplitude`` is |E_c| in V/m.
    """
    if eta_l < 0:
        raise ValueError(f"eta_l must be non-negative, got {eta_l!r}")
    omega_c = params.d_cs * abs(control_amplitude) / (math.sqrt(2.0) * HBAR)
    omega_s = math.sqrt(2.0) * omega_c * eta_l * complex(math.cos(phi_l), math.sin(phi_l))
    return omega_c, omega_s


def control_amplitude_for(omega_c: float, params: CesiumParams) -> float:
    """Inverse of the control Rabi frequency: the |E_c| giving ``omega_c``."""
    return omega_c * math.sqrt(2.0) * HBAR / params.d_cs


def spin_exchange_rate(density: float, params: CesiumParams) -> float:
    """Spin-exchange collision rate (1/s) at alkali density ``density`` (cm^-3)."""
    if density < 0:
        raise ValueError(f"density must be non-negative, got {density!r}")
    return params.alpha_se * density


# config keys -> (attribute, parse transform)
_CONFIG_KEYS = ("delta_hz", "gamma_hz", "f_cs", "alpha_se_cm3_per_s", "nuclear_spin", "p_squared")


def _hz_for(omega: float) -> float:
    """Hz value whose product with 2*pi reproduces ``omega`` bit-exactly when one exists."""
    hz = omega / TWO_PI
    cand = hz
    for _ in range(4):
        if cand * TWO_PI == omega:
            return cand
        cand = math.nextafter(cand, math.inf if cand * TWO_PI < omega else -math.inf)
    return hz


def params_from_mapping(section: dict) -> CesiumParams:
    unknown = set(section) - set(_CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown keys in [cesium]: {', '.join(sorted(unknown))}")
    kw = {}
    try:
        if "delta_hz" in section:
            kw["delta"] = float(section["delta_hz"]) * TWO_PI
        if "gamma_hz" in section:
            kw["gamma"] = float(section["gamma_hz"]) * TWO_PI
        if "f_cs" in section:
            kw["f_cs"] = float(section["f_cs"])
        if "alpha_se_cm3_per_s" in section:
            kw["alpha_se"] = float(section["alpha_se_cm3_per_s"])
        if "nuclear_spin" in section:
            kw["nuclear_spin"] = float(section["nuclear_spin"])
        if "p_squared" in section:
            p2 = float(section["p_squared"])
            if not 0.0 <= p2 <= 1.0:
                raise ConfigError(f"p_squared must lie in [0, 1], got {p2!r}")
            kw["p_coeff"] = math.sqrt(p2)
            kw["q_coeff"] = math.sqrt(1.0 - p2)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"non-numeric value in [cesium]: {exc}") from exc
    return CesiumParams(**kw)


def parse_config(text: str) -> dict:
    """Parse config text, returning the raw table with ``cesium`` resolved to params."""
    try:
        table = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        # message already carries "(at line L, column C)"
        raise ConfigError(f"config syntax error: {exc}") from exc
    section = table.get("cesium", {})
    if not isinstance(section, dict):
        raise ConfigError("[cesium] must be a table")
    table["cesium"] = params_from_mapping(section)
    return table


def load_config(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def dump_params(params: CesiumParams) -> str:
    """Serialize the configurable constants as a ``[cesium]`` section."""
    values = {
        "delta_hz": _hz_for(params.delta),
        "gamma_hz": _hz_for(params.gamma),
        "f_cs": params.f_cs,
        "alpha_se_cm3_per_s": params.alpha_se,
        "nuclear_spin": params.nuclear_spin,
        "p_squared": params.p_coeff**2,
    }
    lines = ["[cesium]"] + [f"{k} = {v!r}" for k, v in values.items()]
    return "\n".join(lines) + "\n"


def param_names() -> list[str]:
    return [f.name for f in fields(CesiumParams)]
