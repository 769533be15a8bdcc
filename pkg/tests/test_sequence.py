import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from serfmem.darkstate import BlochOrientation
from serfmem.sequence import (FitError, MeasurementModel, SequenceConfig, dark_evolution,
                              demodulate_trace, eraser_field, faraday_trace, fit_lifetime,
                              full_transform_exact, full_transform_first_order, phase_line_fit,
                              storage_lifetime, transform_ellipticity, unwrap_along)

# closed-form composition coefficients evaluated in mpmath (tests/oracles/derive_oracles.py)
ELLIPTICITY_A01_ZERO_FIELD = 0.37561442388215993
COMPOSITION_CONSTANT = {0.01: 12.985605608285018, 0.1: 12.71079589195624}

PHI = np.linspace(0, 2 * math.pi, 720, endpoint=False)


def composition_deviation(alpha, wt):
    cfg = SequenceConfig(t_store=1.0, omega_b=wt, tau_s=math.inf, alpha=alpha)
    e1, p1 = full_transform_exact(np.ones_like(PHI), PHI, cfg)
    e2, p2 = full_transform_first_order(np.ones_like(PHI), PHI, cfg)
    return max(np.max(np.abs(e1 - e2)), np.max(np.abs(np.angle(np.exp(1j * (p1 - p2))))))


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            SequenceConfig(t_store=-1.0)
        with pytest.raises(ValueError):
            SequenceConfig(tau_s=0.0)
        with pytest.raises(ValueError):
            MeasurementModel(beta=0.0)

    def test_lifetime_composition(self):
        assert storage_lifetime(0.3) == 0.3
        assert SequenceConfig.from_rates(0.3, r_se=1000.0, kappa=0.0).tau_s == 0.3
        cfg = SequenceConfig.from_rates(0.3, r_se=100.0, kappa=0.1)
        assert 1 / cfg.tau_s == pytest.approx(1 / 0.3 + 10.0)


class TestDarkEvolution:
    def test_identity(self):
        b = BlochOrientation(1e-3, 0.4)
        assert dark_evolution(b, SequenceConfig()) == b

    def test_larmor_offset(self):
        cfg = SequenceConfig(t_store=0.1, omega_b=1.34 * 2 * math.pi)
        out = dark_evolution(BlochOrientation(1e-3, 0.0), cfg)
        assert out.phi_a == pytest.approx(0.84, abs=5e-3)
        assert out.phi_a == pytest.approx(0.842, abs=1e-3)

    def test_one_over_e(self):
        out = dark_evolution(BlochOrientation(1.0, 0.0), SequenceConfig(t_store=0.15, tau_s=0.15))
        assert out.eta_a == pytest.approx(math.exp(-1), rel=1e-15)


class TestFullTransform:
    def test_identity_at_alpha_zero(self):
        cfg = SequenceConfig(t_store=1e-4, tau_s=0.3)
        e, p = full_transform_exact(np.full_like(PHI, 1e-3), PHI, cfg)
        scale = math.exp(-1e-4 / 0.3)
        assert np.max(np.abs(e / scale / 1e-3 - 1)) < 1e-12
        assert np.max(np.abs(p - PHI)) < 1e-12

    def test_zero_field_peak_to_peak(self):
        a = 0.1
        cfg = SequenceConfig(alpha=a, tau_s=math.inf)
        e, _ = full_transform_exact(np.full_like(PHI, 1e-3), PHI, cfg)
        assert (e.max() - e.min()) / 1e-3 == pytest.approx(4 * a, rel=0.1)

    def test_eraser_peak_to_peak(self):
        a, t = 0.1, 0.1
        cfg = SequenceConfig(t_store=t, omega_b=eraser_field(a, t), alpha=a, tau_s=math.inf)
        e, _ = full_transform_exact(np.full_like(PHI, 1e-3), PHI, cfg)
        assert e.max() - e.min() <= 5 * a**2 * 1e-3

    @pytest.mark.parametrize("alpha", [0.01, 0.1])
    def test_composition_constant_oracle(self, alpha):
        worst = max(composition_deviation(alpha, wt) for wt in np.linspace(-math.pi, math.pi, 61))
        # frozen oracle uses a coarser phase grid, so it can only sit slightly below
        assert worst / alpha**2 == pytest.approx(COMPOSITION_CONSTANT[alpha], rel=2e-3)
        assert worst <= 13.1 * alpha**2

    def test_composition_constant_exceeds_ten(self):
        # the second-order gap at zero field is about 13 alpha^2
        assert composition_deviation(0.05, 0.0) > 10 * 0.05**2

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0.001, 0.1), st.floats(-math.pi, math.pi))
    def test_composition_bound(self, alpha, wt):
        assert composition_deviation(alpha, wt) <= 13.1 * alpha**2


class TestFirstOrder:
    def test_eraser_condition(self):
        a, t = 0.07, 0.2
        cfg = SequenceConfig(t_store=t, omega_b=eraser_field(a, t), alpha=a, tau_s=0.3)
        e, p = full_transform_first_order(np.full_like(PHI, 1e-3), PHI, cfg)
        wt = 3 * a - math.pi / 2
        assert np.allclose(p, PHI + wt - 6 * a, atol=1e-15)
        assert np.allclose(e, 1e-3 * math.exp(-t / 0.3), rtol=1e-15)

    def test_pure_larmor(self):
        cfg = SequenceConfig(t_store=0.1, omega_b=3.0, alpha=0.0)
        _, p = full_transform_first_order(np.full_like(PHI, 1e-3), PHI, cfg)
        assert np.allclose(p, PHI + 0.3, atol=1e-15)

    def test_example(self):
        cfg = SequenceConfig(alpha=0.05)
        e, _ = full_transform_first_order(1.0, math.pi / 4, cfg)
        assert e == pytest.approx(1 - 0.1 * math.cos(-0.15), rel=1e-15)
        assert e == pytest.approx(0.9011, abs=1e-4)

    def test_range(self):
        with pytest.raises(ValueError):
            full_transform_first_order(1e-3, 0.0, SequenceConfig(alpha=0.3))

    @given(st.floats(0, 0.1), st.floats(-math.pi, math.pi))
    def test_phase_winding_slope_one(self, alpha, wt):
        cfg = SequenceConfig(t_store=1.0, omega_b=wt, alpha=alpha)
        _, p = full_transform_first_order(1e-3, np.append(PHI, 2 * math.pi), cfg)
        u = unwrap_along(p)
        assert (u[-1] - u[0]) / (2 * math.pi) == pytest.approx(1.0, abs=1e-12)

    @given(st.floats(0, 0.1), st.floats(-math.pi, math.pi))
    def test_phase_best_fit_slope(self, alpha, wt):
        # regressing the cos(2 phi + wt) ripple on phi over one period:
        # slope - 1 = (3 alpha / pi^2) sin(wt) cos(wt - 3 alpha)
        cfg = SequenceConfig(t_store=1.0, omega_b=wt, alpha=alpha)
        phi = np.linspace(0, 2 * math.pi, 7200, endpoint=False)
        _, p = full_transform_first_order(1e-3, phi, cfg)
        slope, _ = phase_line_fit(phi, p)
        expected = 3 * alpha / math.pi**2 * math.sin(wt) * math.cos(wt - 3 * alpha)
        assert slope - 1 == pytest.approx(-expected, abs=1e-3 * alpha + 1e-12)
        assert abs(slope - 1) <= 3 * alpha * (1 + math.sin(3 * alpha)) / (2 * math.pi**2) + 1e-3 * alpha + 1e-12

    @pytest.mark.parametrize("alpha", [0.01, 0.03, 0.05])
    def test_phase_best_fit_within_one_percent(self, alpha):
        for wt in np.linspace(-math.pi, math.pi, 91):
            _, p = full_transform_first_order(np.full_like(PHI, 1e-3), PHI,
                                              SequenceConfig(t_store=1.0, omega_b=wt, alpha=alpha))
            assert abs(phase_line_fit(PHI, p)[0] - 1) <= 1e-2

    def test_phase_best_fit_exceeds_one_percent_at_large_alpha(self):
        a = 0.1
        wt = (math.pi / 2 + 3 * a) / 2
        _, p = full_transform_first_order(np.full_like(PHI, 1e-3), PHI,
                                          SequenceConfig(t_store=1.0, omega_b=wt, alpha=a))
        assert abs(phase_line_fit(PHI, p)[0] - 1) > 1e-2

    @given(st.floats(0, 2 * math.pi), st.floats(0.01, 1.0))
    def test_energy_decay(self, phi, t):
        cfg = SequenceConfig(t_store=t, tau_s=0.4)
        e, _ = full_transform_exact(1e-3, phi, cfg)
        assert e == pytest.approx(1e-3 * math.exp(-t / 0.4), rel=1e-13)


class TestEraser:
    def test_value(self):
        assert eraser_field(0.065382, 0.1) == pytest.approx(-13.75, abs=5e-3)
        assert eraser_field(0.065382, 0.1) / (2 * math.pi) == pytest.approx(-2.19, abs=5e-3)

    def test_root_and_scaling(self):
        assert eraser_field(math.pi / 6, 0.37) == pytest.approx(0.0, abs=1e-15)
        assert eraser_field(0.05, 0.2) == pytest.approx(eraser_field(0.05, 0.1) / 2, rel=1e-15)

    def test_zero_time_rejected(self):
        with pytest.raises(ValueError):
            eraser_field(0.1, 0.0)


class TestEllipticity:
    def test_alpha_zero(self):
        assert transform_ellipticity(SequenceConfig(alpha=0.0)) < 1e-12

    def test_zero_field_oracle(self):
        got = transform_ellipticity(SequenceConfig(alpha=0.1, tau_s=math.inf))
        assert got == pytest.approx(ELLIPTICITY_A01_ZERO_FIELD, rel=1e-12)
        assert got == pytest.approx(0.4, rel=0.1)

    def test_eraser(self):
        cfg = SequenceConfig(t_store=0.1, omega_b=eraser_field(0.1, 0.1), alpha=0.1, tau_s=math.inf)
        assert transform_ellipticity(cfg) <= 5 * 0.1**2

    @pytest.mark.parametrize("alpha", [0.02, 0.035, 0.05, 0.075, 0.1])
    def test_suppression(self, alpha):
        zero = transform_ellipticity(SequenceConfig(t_store=0.1, alpha=alpha))
        erased = transform_ellipticity(SequenceConfig(t_store=0.1, omega_b=eraser_field(alpha, 0.1), alpha=alpha))
        assert erased * 5 <= zero

    def test_grid_guard(self):
        with pytest.raises(ValueError):
            transform_ellipticity(SequenceConfig(), grid_size=32)


class TestFitLifetime:
    @pytest.mark.parametrize("tau, tmax", [(0.149, 0.5), (0.43, 1.0)])
    def test_noiseless(self, tau, tmax):
        t = np.linspace(0, tmax, 15)
        fit = fit_lifetime(np.column_stack([t, 2.5 * np.exp(-t / tau)]))
        assert fit.tau_s == pytest.approx(tau, rel=1e-6)
        assert fit.amplitude == pytest.approx(2.5, rel=1e-6)
        tau_s, err = fit
        assert tau_s == fit.tau_s and err < 1e-6 * tau

    def test_noisy_calibration(self):
        tau, hits = 0.15, 0
        t = np.linspace(0, 0.45, 20)
        for seed in range(100):
            rng = np.random.default_rng(seed)
            y = np.exp(-t / tau) * (1 + 0.05 * rng.standard_normal(t.size))
            hits += abs(fit_lifetime(np.column_stack([t, y])).tau_s / tau - 1) <= 0.1
        assert hits >= 95

    def test_flat_trace(self):
        t = np.linspace(0, 1, 5)
        assert math.isinf(fit_lifetime(np.column_stack([t, np.ones(5)])).tau_s)

    @pytest.mark.parametrize("samples", [
        [[0, 1.0], [1, 0.5]],
        [[0, 1.0], [0, 0.5], [0, 0.4]],
        [[0, 1.0], [1, 0.0], [2, 0.4]],
        [[0, 1.0], [1, -0.1], [2, 0.4]],
        [[0, 1.0], [1, np.nan], [2, 0.4]],
    ])
    def test_rejects(self, samples):
        with pytest.raises(FitError):
            fit_lifetime(samples)

    def test_record(self):
        t = np.linspace(0, 1, 6)
        rec = fit_lifetime(np.column_stack([t, np.exp(-t / 0.43)])).as_record()
        assert set(rec) == {"tau_s", "stderr", "n_points"} and rec["n_points"] == 6


class TestFaraday:
    meas = MeasurementModel(beta=0.7)

    def grid(self, periods=10, ppp=32):
        period = 2 * math.pi / self.meas.omega_b_monitor
        return np.arange(periods * ppp) * (period / ppp)

    def test_flat_for_zero_tilt(self):
        tr = faraday_trace(BlochOrientation(0.0, 1.0), self.meas, self.grid())
        assert np.all(tr[:, 1] == 0)

    def test_initial_value(self):
        b = BlochOrientation(1e-2, 1.2)
        tr = faraday_trace(b, self.meas, self.grid())
        assert tr[0, 1] == pytest.approx(self.meas.beta * b.s_x, rel=1e-14)

    @given(st.floats(1e-4, 0.1), st.floats(-math.pi, math.pi))
    def test_round_trip(self, eta, phi):
        b = BlochOrientation(eta, phi)
        s_x, s_y = demodulate_trace(faraday_trace(b, self.meas, self.grid()), self.meas)
        assert abs(s_x - b.s_x) < 1e-9 * eta and abs(s_y - b.s_y) < 1e-9 * eta

    def test_example_round_trip(self):
        b = BlochOrientation(1e-2, 1.2)
        s_x, s_y = demodulate_trace(faraday_trace(b, self.meas, self.grid()), self.meas)
        assert abs(s_x - b.s_x) < 1e-9 and abs(s_y - b.s_y) < 1e-9

    def test_noisy_phase(self):
        b = BlochOrientation(1e-2, 1.2)
        tr = faraday_trace(b, self.meas, self.grid(periods=10))
        amp = self.meas.beta * math.hypot(b.s_x, b.s_y)
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(50):
            noisy = tr.copy()
            noisy[:, 1] += 0.01 * amp * rng.standard_normal(len(tr))
            s_x, s_y = demodulate_trace(noisy, self.meas)
            worst = max(worst, abs(math.remainder(math.atan2(s_y, s_x) - 1.2, 2 * math.pi)))
        assert worst < 0.05

    def test_zero_trace(self):
        tr = np.column_stack([self.grid(), np.zeros(320)])
        assert demodulate_trace(tr, self.meas) == (0.0, 0.0)

    def test_short_or_sparse_rejected(self):
        with pytest.raises(ValueError):
            demodulate_trace(faraday_trace(BlochOrientation(1e-2, 0), self.meas, self.grid(periods=1)), self.meas)
        with pytest.raises(ValueError):
            demodulate_trace(faraday_trace(BlochOrientation(1e-2, 0), self.meas, self.grid(ppp=4)), self.meas)
        t = self.grid()
        t[5] += 1e-7
        with pytest.raises(ValueError):
            demodulate_trace(faraday_trace(BlochOrientation(1e-2, 0), self.meas, t), self.meas)
