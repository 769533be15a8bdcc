"""Ellipse fitting for phase-map scans."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EllipseFit:
    """General-conic fit of a closed curve.

    ``orientation`` is the direction of the semi-major axis, in [-pi/2, pi/2).
    """

    center: tuple[float, float]
    semi_major: float
    semi_minor: float
    orientation: float
    residual: float

    def eccentric_anomaly(self, x, y) -> np.ndarray:
        """Eccentric anomaly of points on the ellipse, measured from the semi-major axis."""
        dx = np.asarray(x, float) - self.center[0]
        dy = np.asarray(y, float) - self.center[1]
        c, s = math.cos(self.orientation), math.sin(self.orientation)
        u, v = c * dx + s * dy, -s * dx + c * dy
        return np.arctan2(v / self.semi_minor, u / self.semi_major)


def _wrap_half_turn(angle: float) -> float:
    return (angle + math.pi / 2) % math.pi - math.pi / 2


def fit_ellipse(x, y) -> EllipseFit:
    """Least-squares conic fit ``A x^2 + B xy + C y^2 + D x + E y + F = 0``.

    Coordinates are centered and scaled before the SVD so the fit is well
    conditioned for tiny ellipses (radii ~ 1e-3 and below).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 6:
        raise ValueError("need at least 6 matching points")
    mx, my = x.mean(), y.mean()
    scale = math.sqrt(np.mean((x - mx) ** 2 + (y - my) ** 2))
    if scale == 0:
        raise ValueError("degenerate point set")
    xs, ys = (x - mx) / scale, (y - my) / scale
    design = np.column_stack([xs * xs, xs * ys, ys * ys, xs, ys, np.ones_like(xs)])
    _, sv, vt = np.linalg.svd(design, full_matrices=False)
    coeffs = vt[-1]
    if coeffs[0] + coeffs[2] < 0:
        coeffs = -coeffs
    a, b, c, d, e, f = coeffs
    quad = np.array([[a, b / 2], [b / 2, c]])
    if np.linalg.det(quad) <= 0:
        raise ValueError("points do not lie on an ellipse")
    center = np.linalg.solve(2 * quad, -np.array([d, e]))
    f0 = f + 0.5 * (d * center[0] + e * center[1])
    evals, evecs = np.linalg.eigh(quad)
    radii = np.sqrt(-f0 / evals)
    if not np.all(np.isfinite(radii)):
        raise ValueError("points do not lie on an ellipse")
    # larger radius <-> smaller eigenvalue, which eigh puts first
    major_dir = evecs[:, 0]
    orientation = _wrap_half_turn(math.atan2(major_dir[1], major_dir[0]))
    return EllipseFit(
        center=(float(mx + scale * center[0]), float(my + scale * center[1])),
        semi_major=float(scale * radii[0]),
        semi_minor=float(scale * radii[1]),
        orientation=orientation,
        residual=float(sv[-1] / sv[0]),
    )


def anomaly_offset(fit: EllipseFit, x, y, phase_in) -> float:
    """Circular mean of (eccentric anomaly - input phase), reduced mod pi into [-pi/2, pi/2).

    This is the angle by which a phase map is rotated when its input phase
    acts as the eccentric anomaly of the image ellipse.
    """
    diff = fit.eccentric_anomaly(x, y) - np.asarray(phase_in, float)
    return _wrap_half_turn(0.5 * float(np.angle(np.mean(np.exp(2j * diff)))))


def mean_phase_shift(phase_in, phase_out) -> float:
    """Mean of (phase_in - phase_out) over a scan, after unwrapping the output.

    The branch of the first output sample is arbitrary, so the result is
    reduced to (-pi, pi].
    """
    diff = np.mean(np.asarray(phase_in, float) - np.unwrap(np.asarray(phase_out, float)))
    return float(math.remainder(diff, 2 * math.pi))
