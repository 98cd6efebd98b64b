import math

import numpy as np
import pytest

from derivkit import (
    Grid,
    Signal,
    TuneSpec,
    ValidationError,
    autotune,
    cumtrapz,
    error_correlation,
    gamma_heuristic,
    proxy_loss,
    rmse,
    robust_proxy_loss,
    total_variation,
)
from derivkit.tune import _nelder_mead, _robust_location, seeded_stream


def noisy_sine(n=400, dt=0.01, sigma=0.1, seed=0):
    rng = np.random.default_rng(seed)
    t = dt * np.arange(n)
    truth = np.sin(2 * np.pi * t)
    deriv = 2 * np.pi * np.cos(2 * np.pi * t)
    return Signal(Grid(t), truth + sigma * rng.standard_normal(n)), deriv


class TestRmse:
    def test_identical(self):
        assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_unit_offset(self):
        assert rmse(np.arange(5) + 1.0, np.arange(5.0)) == pytest.approx(1.0)

    def test_direct_formula(self):
        assert rmse([0.0, 0.0], [3.0, 4.0]) == pytest.approx(math.sqrt(25 / 2))

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            rmse([1.0], [1.0, 2.0])


class TestErrorCorrelation:
    def test_constant_offset_has_no_bias(self):
        truth = np.sin(np.linspace(0, 10, 200))
        assert error_correlation(truth + 2.0, truth) == 0.0

    def test_shrunken_estimate_fully_biased(self):
        truth = np.sin(np.linspace(0, 10, 200))
        assert error_correlation(0.5 * truth, truth) == pytest.approx(1.0)

    def test_independent_noise_uncorrelated(self):
        rng = np.random.default_rng(0)
        truth = np.sin(np.linspace(0, 20, 1000))
        est = truth + 0.3 * rng.standard_normal(1000)
        assert error_correlation(est, truth) < 0.1

    def test_zero_variance_truth_rejected(self):
        with pytest.raises(ValidationError):
            error_correlation([1.0, 2.0], [3.0, 3.0])


class TestGammaHeuristic:
    def test_unit_inputs(self):
        assert gamma_heuristic(1.0, 1.0) == pytest.approx(math.exp(-5.1), rel=1e-12)

    def test_central_benchmark_point(self):
        expected = math.exp(-1.6 * math.log(3) - 0.71 * math.log(0.01) - 5.1)
        value = gamma_heuristic(3.0, 0.01)
        assert value == pytest.approx(expected, rel=1e-12)
        assert value == pytest.approx(2.77e-2, abs=1e-4)

    def test_dt_doubling_factor(self):
        ratio = gamma_heuristic(2.0, 0.02) / gamma_heuristic(2.0, 0.01)
        assert ratio == pytest.approx(2 ** (-0.71), rel=1e-12)


class TestProxyLoss:
    def test_exact_derivative_of_linear_truth(self):
        t = 0.01 * np.arange(200)
        s = Signal(Grid(t), 2.0 * t + 1.0)
        xdot = np.full(200, 2.0)
        loss = proxy_loss(xdot, s, gamma=0.5)
        assert loss == pytest.approx(0.5 * total_variation(xdot), abs=1e-6)

    def test_zero_derivative_on_zero_mean_data(self):
        rng = np.random.default_rng(1)
        t = 0.01 * np.arange(300)
        y = rng.standard_normal(300)
        y -= y.mean()
        s = Signal(Grid(t), y)
        loss = proxy_loss(np.zeros(300), s, gamma=0.3)
        assert loss == pytest.approx(np.sqrt(np.mean(y**2)), rel=1e-12)

    def test_gamma_zero_is_reconstruction_rmse(self):
        s, _ = noisy_sine(n=150)
        xdot = np.gradient(s.values, s.grid.points)
        integral = cumtrapz(Signal(s.grid, xdot))
        mu = np.mean(s.values - integral)
        assert proxy_loss(xdot, s, gamma=0.0) == pytest.approx(
            rmse(integral + mu, s.values), rel=1e-12)


class TestRobustProxyLoss:
    def test_quadratic_branch_equals_proxy(self):
        s, deriv = noisy_sine(n=250, sigma=0.05, seed=2)
        huge = robust_proxy_loss(deriv, s, gamma=0.2, m=1e6)
        plain = proxy_loss(deriv, s, gamma=0.2)
        assert huge == pytest.approx(plain, abs=1e-9)

    def test_m_to_infinity_on_random_inputs(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            n = int(rng.integers(20, 120))
            t = np.cumsum(rng.uniform(0.005, 0.05, n))
            s = Signal(Grid(t), rng.standard_normal(n))
            xdot = rng.standard_normal(n)
            gamma = float(rng.uniform(0, 2))
            assert robust_proxy_loss(xdot, s, gamma, m=1e6) == pytest.approx(
                proxy_loss(xdot, s, gamma), abs=1e-9)

    def test_outlier_dampening(self):
        s, deriv = noisy_sine(n=300, seed=4)
        base_robust = robust_proxy_loss(deriv, s, gamma=0.0, m=2.0)
        base_proxy = proxy_loss(deriv, s, gamma=0.0)
        spiked = np.array(s.values)
        resid_scale = np.std(spiked - np.sin(2 * np.pi * s.grid.points))
        spiked[150] += 100 * resid_scale
        s2 = Signal(s.grid, spiked)
        d_robust = robust_proxy_loss(deriv, s2, gamma=0.0, m=2.0) - base_robust
        d_proxy = proxy_loss(deriv, s2, gamma=0.0) - base_proxy
        assert d_robust < 0.2 * d_proxy

    def test_constant_shift_invariance(self):
        s, deriv = noisy_sine(n=200, seed=5)
        shifted = Signal(s.grid, s.values + 123.0)
        a = robust_proxy_loss(deriv, s, gamma=0.7, m=2.0)
        b = robust_proxy_loss(deriv, shifted, gamma=0.7, m=2.0)
        assert a == pytest.approx(b, abs=1e-9)

    def test_losses_lipschitz_in_derivative(self):
        # perturbing the derivative by delta moves either loss by at most
        # |delta|_inf * (T + 2*gamma)
        rng = np.random.default_rng(20)
        s, deriv = noisy_sine(n=300, seed=20)
        span = s.grid.span
        gamma = 0.5
        for _ in range(20):
            delta = rng.uniform(-1, 1, 300) * rng.uniform(0, 0.5)
            bound = np.max(np.abs(delta)) * (span + 2 * gamma) + 1e-12
            d_plain = abs(proxy_loss(deriv + delta, s, gamma)
                          - proxy_loss(deriv, s, gamma))
            d_robust = abs(robust_proxy_loss(deriv + delta, s, gamma, 2.0)
                           - robust_proxy_loss(deriv, s, gamma, 2.0))
            assert d_plain <= bound
            assert d_robust <= bound

    def test_robust_location_matches_brute_force(self):
        rng = np.random.default_rng(6)
        resid = rng.standard_normal(200)
        resid[:5] += 30.0
        radius = 2.0

        def objective(c):
            x = resid + c
            a = np.abs(x)
            return np.sum(np.where(a <= radius, 0.5 * x * x,
                                   radius * a - 0.5 * radius**2))

        c_star = _robust_location(resid, radius)
        grid = np.linspace(c_star - 0.5, c_star + 0.5, 20001)
        brute = grid[np.argmin([objective(c) for c in grid])]
        assert c_star == pytest.approx(brute, abs=1e-4)
        assert objective(c_star) <= objective(brute) + 1e-12


class TestNelderMead:
    def test_minimizes_quadratic(self):
        fn = lambda x: float((x[0] - 1.5) ** 2 + 2 * (x[1] + 0.5) ** 2)
        x, f, evals = _nelder_mead(fn, np.zeros(2), np.array([0.5, 0.5]), 500)
        np.testing.assert_allclose(x, [1.5, -0.5], atol=5e-3)
        assert evals <= 500

    def test_respects_budget(self):
        calls = []
        fn = lambda x: (calls.append(1), float(x @ x))[1]
        _nelder_mead(fn, np.ones(3), np.full(3, 0.3), 40)
        assert len(calls) <= 40


class TestSeededStream:
    def test_deterministic(self):
        a = seeded_stream(1, "x", 2.5).standard_normal(5)
        b = seeded_stream(1, "x", 2.5).standard_normal(5)
        np.testing.assert_array_equal(a, b)

    def test_key_sensitivity(self):
        a = seeded_stream(1, "x").standard_normal(5)
        b = seeded_stream(2, "x").standard_normal(5)
        assert not np.allclose(a, b)


class TestAutotune:
    def test_deterministic_for_fixed_seed(self):
        s, _ = noisy_sine(n=200, seed=7)
        spec = TuneSpec(starts=3, max_evals=30, seed=11)
        a = autotune("savgol", s, spec)
        b = autotune("savgol", s, spec)
        assert a.phi == b.phi
        assert a.info["loss"] == b.info["loss"]

    def test_respects_bounds_and_integrality(self):
        s, _ = noisy_sine(n=200, seed=8)
        config = autotune("savgol", s, TuneSpec(starts=4, max_evals=40, seed=3))
        for name, value in config.phi.items():
            lo, hi = config.bounds[name]
            assert lo <= value <= hi
            if config.scale[name] == "integer":
                assert value == int(value)
        assert config.phi["window"] % 2 == 1

    def test_huber_m_default_switches_with_outliers(self):
        assert TuneSpec().resolved_m == 6.0
        assert TuneSpec(outliers=True).resolved_m == 2.0
        assert TuneSpec(huber_m=3.5, outliers=True).resolved_m == 3.5

    def test_unknown_method(self):
        s, _ = noisy_sine(n=100)
        with pytest.raises(ValidationError, match="unknown method"):
            autotune("nope", s)

    def test_tuned_beats_default_on_noisy_sine(self):
        s, deriv = noisy_sine(n=400, seed=9)
        config = autotune("savgol", s, TuneSpec(starts=4, max_evals=60, seed=0))
        from derivkit import apply_method

        tuned = apply_method("savgol", s, config.phi)
        default = apply_method("savgol", s, {})
        assert rmse(tuned.derivative, deriv) <= rmse(default.derivative, deriv) * 1.05
