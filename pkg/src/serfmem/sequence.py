"""Storage -> dark time -> retrieval, the ellipticity eraser, lifetime fits and Faraday readout."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .darkstate import BlochOrientation, storage_map
from .retrieval import retrieval_map


class FitError(RuntimeError):
    """Lifetime fit rejected its input or failed to converge."""


@dataclass(frozen=True)
class SequenceConfig:
    """Dark-time parameters of one storage run.

    ``tau_s`` is the 1/e time of the stored tilt ``eta_a``. Larmor precession
    advances ``phi_a`` at ``omega_b`` (positive omega_b increases phi_a).
    """

    t_store: float = 0.0
    omega_b: float = 0.0
    tau_s: float = 0.3
    t1: float = 0.3
    alpha: float = 0.0

    def __post_init__(self):
        if self.t_store < 0:
            raise ValueError("t_store must be non-negative")
        if not self.tau_s > 0:
            raise ValueError("tau_s must be positive")

    @classmethod
    def from_rates(cls, t1: float, r_se: float = 0.0, kappa: float = 0.0, **kw) -> "SequenceConfig":
        """Compose the lifetime as ``1/tau_s = 1/T1 + kappa*R_SE``.

        ``kappa`` is zero for orientation storage; for the Delta m = 2 reference
        it can be taken from :func:`serfmem.montecarlo.mc_coherence_decay`.
        """
        return cls(tau_s=storage_lifetime(t1, r_se, kappa), t1=t1, **kw)

    @property
    def larmor_phase(self) -> float:
        return self.omega_b * self.t_store


@dataclass(frozen=True)
class MeasurementModel:
    """Faraday monitor: rotation ``theta = beta*s_y`` under precession at ``omega_b_monitor``."""

    beta: float = 1.0
    omega_b_monitor: float = 1.4e3 * 2 * math.pi

    def __post_init__(self):
        if self.beta == 0:
            raise ValueError("beta must be nonzero")


@dataclass(frozen=True)
class LifetimeFit:
    tau_s: float
    stderr: float
    amplitude: float
    decay_rate: float
    rate_stderr: float
    n_points: int

    def __iter__(self):
        # unpacks as (tau_s, stderr)
        return iter((self.tau_s, self.stderr))

    def as_record(self) -> dict:
        return {"tau_s": self.tau_s, "stderr": self.stderr, "n_points": self.n_points}


def storage_lifetime(t1: float, r_se: float = 0.0, kappa: float = 0.0) -> float:
    if not t1 > 0:
        raise ValueError("t1 must be positive")
    return 1.0 / (1.0 / t1 + kappa * r_se)


def dark_evolution(bloch: BlochOrientation, cfg: SequenceConfig) -> BlochOrientation:
    t = cfg.t_store
    return BlochOrientation(bloch.eta_a * math.exp(-t / cfg.tau_s), bloch.phi_a + cfg.omega_b * t)


def full_transform_exact(eta_l, phi_l, cfg: SequenceConfig):
    """Compose storage, dark evolution and retrieval without further approximation."""
    decay = math.exp(-cfg.t_store / cfg.tau_s)
    eta_a, phi_a = _as_pair(storage_map(eta_l, phi_l, cfg.alpha))
    return retrieval_map(eta_a * decay, phi_a + cfg.larmor_phase, cfg.alpha)


def _as_pair(res):
    if isinstance(res, BlochOrientation):
        return res.eta_a, res.phi_a
    return res


def full_transform_first_order(eta_l, phi_l, cfg: SequenceConfig):
    """Input -> output light state to first order in alpha."""
    if not abs(cfg.alpha) < 0.3:
        raise ValueError("first-order transform needs |alpha| < 0.3")
    a, wt = cfg.alpha, cfg.larmor_phase
    phi_l = np.asarray(phi_l, dtype=float)
    envelope = math.cos(wt - 3 * a)
    phi_out = phi_l + wt - 6 * a - 2 * a * envelope * np.cos(2 * phi_l + wt)
    eta_out = (np.asarray(eta_l, dtype=float) * math.exp(-cfg.t_store / cfg.tau_s)
               * (1 - 2 * a * np.sin(2 * phi_l + wt) * envelope))
    if np.ndim(eta_out) == 0:
        return float(eta_out), float(phi_out)
    return eta_out, phi_out


def eraser_field(alpha: float, t_store: float) -> float:
    """Larmor frequency (rad/s) satisfying ``omega_b*t = 3*alpha - pi/2``.

    Negative for alpha < pi/6, i.e. the field points against the sense that
    advances phi_a.
    """
    if not t_store > 0:
        raise ValueError("t_store must be positive")
    return (3 * alpha - math.pi / 2) / t_store


def transform_ellipticity(cfg: SequenceConfig, grid_size: int = 360, eta_l: float = 1e-3) -> float:
    """Relative peak-to-peak spread (max - min)/mean of the output amplitude over input phase."""
    if grid_size < 64:
        raise ValueError("grid_size must be at least 64")
    phi = np.linspace(0.0, 2 * math.pi, grid_size, endpoint=False)
    eta_out, _ = full_transform_exact(np.full(grid_size, eta_l), phi, cfg)
    return float((eta_out.max() - eta_out.min()) / eta_out.mean())


def unwrap_along(phases) -> np.ndarray:
    """Nearest-branch continuation of a phase sequence."""
    return np.unwrap(np.asarray(phases, dtype=float))


def phase_line_fit(phi_in, phi_out) -> tuple[float, float]:
    """Least-squares slope and intercept of unwrapped output phase against input phase."""
    slope, intercept = np.polyfit(np.asarray(phi_in, float), unwrap_along(phi_out), 1)
    return float(slope), float(intercept)


def fit_lifetime(samples, *, xtol: float = 1e-10, max_iter: int = 100) -> LifetimeFit:
    """Fit ``A*exp(-t/tau)`` to (t, power) samples.

    A log-linear regression seeds a Levenberg-Marquardt refinement on the
    linear-scale residuals. The fit is parameterized by the decay rate, so a
    flat or growing trace yields ``tau_s = inf`` instead of a failure.
    """
    arr = np.asarray(samples, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise FitError("samples must be (t, power) pairs")
    t, y = arr[:, 0], arr[:, 1]
    if len(t) < 3:
        raise FitError("need at least 3 samples")
    if np.unique(t).size < 2:
        raise FitError("need at least two distinct sample times")
    if not np.all(np.isfinite(arr)) or np.any(y <= 0):
        raise FitError("powers must be finite and strictly positive")

    slope, intercept = np.polyfit(t, np.log(y), 1)
    t_scale = float(np.ptp(t)) or 1.0
    y_scale = float(np.max(y))
    # dimensionless parameters: ln(A/y_scale) and rate*t_scale
    x0 = np.array([intercept - math.log(y_scale), -slope * t_scale])
    ts, ys = t / t_scale, y / y_scale

    def resid(p):
        return np.exp(p[0] - p[1] * ts) - ys

    def jac(p):
        m = np.exp(p[0] - p[1] * ts)
        return np.column_stack([m, -ts * m])

    res = least_squares(resid, x0, jac=jac, method="lm", xtol=xtol, ftol=1e-15, gtol=1e-15,
                        max_nfev=max_iter * 3)
    if not res.success and res.status != 0:
        raise FitError(f"lifetime fit did not converge: {res.message}")
    if res.status == 0 and res.nfev >= max_iter * 3:
        raise FitError("lifetime fit hit the iteration limit")
    log_a, rate = res.x
    n = len(t)
    dof = max(n - 2, 1)
    s2 = float(res.fun @ res.fun) / dof
    try:
        cov = np.linalg.inv(res.jac.T @ res.jac) * s2
    except np.linalg.LinAlgError:
        cov = np.full((2, 2), np.inf)
    rate_phys = rate / t_scale
    rate_err = math.sqrt(max(cov[1, 1], 0.0)) / t_scale
    if rate_phys > 0:
        tau, tau_err = 1.0 / rate_phys, rate_err / rate_phys**2
    else:
        tau, tau_err = math.inf, math.inf
    return LifetimeFit(tau, tau_err, math.exp(log_a) * y_scale, rate_phys, rate_err, n)


def faraday_trace(bloch: BlochOrientation, meas: MeasurementModel, t_grid) -> np.ndarray:
    """Rows of (t, theta) with ``theta = C cos(omega t + phi_a)``, ``C = beta*|s_perp|``."""
    t = np.asarray(t_grid, dtype=float)
    amp = meas.beta * math.hypot(bloch.s_x, bloch.s_y)
    theta = amp * np.cos(meas.omega_b_monitor * t + bloch.phi_a)
    return np.column_stack([t, theta])


def demodulate_trace(trace, meas: MeasurementModel) -> tuple[float, float]:
    """Recover (s_x, s_y) at t = 0 from a Faraday rotation trace.

    Least-squares projection onto cos and sin at the monitor frequency; needs
    uniform sampling, at least 8 points per period and 2 periods of span.
    """
    arr = np.asarray(trace, dtype=float)
    t, theta = arr[:, 0], arr[:, 1]
    if len(t) < 16:
        raise ValueError("trace too short")
    dt = np.diff(t)
    if np.any(dt <= 0) or np.ptp(dt) > 1e-6 * dt.mean():
        raise ValueError("trace must be uniformly sampled in increasing time")
    period = 2 * math.pi / abs(meas.omega_b_monitor)
    if dt.mean() > period / 8:
        raise ValueError("need at least 8 samples per modulation period")
    if t[-1] - t[0] < 2 * period - 0.5 * dt.mean():
        raise ValueError("trace must span at least 2 modulation periods")
    w = meas.omega_b_monitor
    # theta = C cos(phi) cos(wt) - C sin(phi) sin(wt)
    design = np.column_stack([np.cos(w * t), -np.sin(w * t)])
    (c_cos, c_sin), *_ = np.linalg.lstsq(design, theta, rcond=None)
    return float(c_cos / meas.beta), float(c_sin / meas.beta)
