import numpy as np
import pytest

from derivkit import (
    ContinuousModel,
    Grid,
    LinearGaussianModel,
    RobustSpec,
    Signal,
    ValidationError,
    constant_derivative_continuous,
    constant_derivative_model,
    cruise_control_matrices,
    discretize,
    hill_profile,
    kalman_filter,
    kalman_irregular,
    robust_map_smooth,
    robustdiff,
    rts_smooth,
    rtsdiff,
)


def random_stable_model(rng, d=None, p=None):
    d = d or rng.integers(1, 5)
    p = p or rng.integers(1, 3)
    A = rng.standard_normal((d, d))
    A *= 0.9 / max(np.abs(np.linalg.eigvals(A)).max(), 1e-9)
    C = rng.standard_normal((p, d))
    Lq = rng.standard_normal((d, d)) * 0.3
    Q = Lq @ Lq.T + 0.01 * np.eye(d)
    Lr = rng.standard_normal((p, p)) * 0.3
    R = Lr @ Lr.T + 0.05 * np.eye(p)
    x0 = rng.standard_normal(d)
    P0 = np.eye(d)
    return LinearGaussianModel(A=A, B=np.zeros((d, 0)), C=C, Q=Q, R=R, x0=x0, P0=P0)


def simulate_model(model, n, rng):
    d = model.state_dim
    p = model.measurement_dim
    Lq = np.linalg.cholesky(model.Q)
    Lr = np.linalg.cholesky(model.R)
    x = model.x0.copy()
    xs, ys = [], []
    for _ in range(n):
        x = model.A @ x + Lq @ rng.standard_normal(d)
        xs.append(x.copy())
        ys.append(model.C @ x + Lr @ rng.standard_normal(p))
    return np.array(xs), np.array(ys)


def cruise_data(dt=0.01, n=400, sigma=0.1, seed=0):
    A, B, C = cruise_control_matrices(dt)
    t = dt * np.arange(n)
    us = np.column_stack([hill_profile(t - dt), np.full(n, 0.5)])
    x = np.zeros(4)
    states = [x]
    for i in range(1, n):
        x = A @ x + B @ us[i]
        states.append(x)
    states = np.array(states)
    rng = np.random.default_rng(seed)
    ys = states[:, 0] + sigma * rng.standard_normal(n)
    return A, B, C, t, us, states, ys


def fig11_model(A, B, C, dt, y0):
    Q = 1000.0 * dt * np.diag([(0.5 * dt**2) ** 2, dt**2, 1.0, (0.5 * dt**2) ** 2])
    R = np.array([[0.1]])
    x0 = np.array([y0, 0.0, 0.0, 0.0])
    return LinearGaussianModel(A=A, B=B, C=C, Q=Q, R=R, x0=x0, P0=10.0 * np.eye(4))


class TestKalmanFilter:
    def test_scalar_gain_half(self):
        # A = C = 1, Q = 0, P0 = R: prior variance equals R, so K = 1/2
        model = LinearGaussianModel(A=[[1.0]], B=np.zeros((1, 0)), C=[[1.0]],
                                    Q=[[0.0]], R=[[1.0]], x0=[0.0], P0=[[1.0]])
        track = kalman_filter(model, np.array([2.0]))
        gain = (track.states[0, 0] - track.apriori_states[0, 0]) / (
            2.0 - track.apriori_states[0, 0])
        assert gain == pytest.approx(0.5, abs=1e-12)

    def test_noiseless_linear_tracking(self):
        # position-velocity model, no noise: estimates lock onto the ramp
        dt = 0.1
        model = LinearGaussianModel(
            A=[[1.0, dt], [0.0, 1.0]], B=np.zeros((2, 0)), C=[[1.0, 0.0]],
            Q=np.zeros((2, 2)), R=[[1e-12]], x0=[0.0, 0.0], P0=np.eye(2))
        t = dt * np.arange(100)
        truth = 1.0 + 2.0 * t
        track = kalman_filter(model, truth)
        assert np.max(np.abs(track.states[20:, 0] - truth[20:])) < 1e-8
        assert np.max(np.abs(track.states[20:, 1] - 2.0)) < 1e-6

    def test_cruise_control_smoother_beats_filter(self):
        A, B, C, t, us, states, ys = cruise_data(seed=3)
        model = fig11_model(A, B, C, 0.01, ys[0])
        track = kalman_filter(model, ys, us)
        xr, _ = rts_smooth(track)
        rmse_f = np.sqrt(np.mean((track.states[:, 0] - states[:, 0]) ** 2))
        rmse_s = np.sqrt(np.mean((xr[:, 0] - states[:, 0]) ** 2))
        assert np.isfinite(rmse_f)
        assert rmse_s < rmse_f

    def test_covariance_symmetry(self):
        rng = np.random.default_rng(1)
        model = random_stable_model(rng, d=3, p=2)
        _, ys = simulate_model(model, 100, rng)
        track = kalman_filter(model, ys)
        for P in track.covariances:
            assert np.max(np.abs(P - P.T)) <= 1e-9 * max(np.max(np.abs(P)), 1e-30)

    def test_gain_optimality_spot_check(self):
        rng = np.random.default_rng(4)
        model = random_stable_model(rng, d=3, p=1)
        _, ys = simulate_model(model, 40, rng)
        track = kalman_filter(model, ys)
        C, R = model.C, model.R
        for n in rng.choice(40, 10, replace=False):
            Pp = track.apriori_covariances[n]
            S = C @ Pp @ C.T + R
            K_opt = Pp @ C.T @ np.linalg.inv(S)

            def trace_p(K):
                IKC = np.eye(3) - K @ C
                return np.trace(IKC @ Pp @ IKC.T + K @ R @ K.T)

            base = trace_p(K_opt)
            for _ in range(5):
                direction = rng.standard_normal(K_opt.shape)
                assert trace_p(K_opt + 1e-4 * direction) >= base - 1e-12

    def test_dimension_validation(self):
        with pytest.raises(ValidationError):
            LinearGaussianModel(A=np.eye(2), B=np.zeros((2, 0)), C=[[1.0]],
                                Q=np.eye(2), R=[[1.0]], x0=[0.0], P0=np.eye(2))

    def test_psd_validation(self):
        with pytest.raises(ValidationError, match="positive semidefinite"):
            LinearGaussianModel(A=np.eye(1), B=np.zeros((1, 0)), C=np.eye(1),
                                Q=[[-1.0]], R=[[1.0]], x0=[0.0], P0=np.eye(1))


class TestRtsSmooth:
    def test_last_step_equals_filter(self):
        rng = np.random.default_rng(2)
        model = random_stable_model(rng, d=2, p=1)
        _, ys = simulate_model(model, 50, rng)
        track = kalman_filter(model, ys)
        xr, Pr = rts_smooth(track)
        np.testing.assert_array_equal(xr[-1], track.states[-1])
        np.testing.assert_array_equal(Pr[-1], track.covariances[-1])

    def test_trace_never_increases(self):
        A, B, C, t, us, states, ys = cruise_data(seed=7)
        model = fig11_model(A, B, C, 0.01, ys[0])
        track = kalman_filter(model, ys, us)
        _, Pr = rts_smooth(track)
        for n in range(len(ys)):
            assert np.trace(Pr[n]) <= np.trace(track.covariances[n]) + 1e-10

    def test_smoother_beats_filter_across_seeds(self):
        wins = 0
        for seed in range(20):
            A, B, C, t, us, states, ys = cruise_data(seed=seed, n=200)
            model = fig11_model(A, B, C, 0.01, ys[0])
            track = kalman_filter(model, ys, us)
            xr, _ = rts_smooth(track)
            rmse_f = np.sqrt(np.mean((track.states[:, 0] - states[:, 0]) ** 2))
            rmse_s = np.sqrt(np.mean((xr[:, 0] - states[:, 0]) ** 2))
            wins += rmse_s < rmse_f
        assert wins >= 18


class TestConstantDerivativeModel:
    def test_nu2_q_matrix(self):
        dt, q = 0.1, 2.0
        model = constant_derivative_model(2, dt, q, 1.0)
        expected = q * np.array([
            [dt**5 / 20, dt**4 / 8, dt**3 / 6],
            [dt**4 / 8, dt**3 / 3, dt**2 / 2],
            [dt**3 / 6, dt**2 / 2, dt],
        ])
        np.testing.assert_allclose(model.Q, expected, rtol=1e-14)

    def test_nu2_a_matrix(self):
        dt = 0.25
        model = constant_derivative_model(2, dt, 1.0, 1.0)
        expected = np.array([[1, dt, dt**2 / 2], [0, 1, dt], [0, 0, 1.0]])
        np.testing.assert_allclose(model.A, expected, rtol=1e-15)

    def test_q_vanishes_with_dt(self):
        for nu in (1, 2, 3):
            small = constant_derivative_model(nu, 1e-8, 1.0, 1.0)
            assert np.max(np.abs(small.Q)) < 1e-7

    def test_invalid_nu(self):
        with pytest.raises(ValidationError):
            constant_derivative_model(4, 0.1, 1.0, 1.0)

    def test_seed_and_measurement(self):
        model = constant_derivative_model(1, 0.1, 1.0, 2.0, y0=3.5)
        np.testing.assert_allclose(model.x0, [3.5, 0.0])
        np.testing.assert_allclose(model.C, [[1.0, 0.0]])
        np.testing.assert_allclose(model.P0, 10.0 * np.eye(2))
        assert model.R[0, 0] == 2.0


class TestDiscretize:
    def test_scalar_integrator(self):
        cm = ContinuousModel(Ac=[[0.0]], Bc=np.zeros((1, 0)), Qc=[[3.0]])
        A, B, Q = discretize(cm, 0.5)
        assert A[0, 0] == pytest.approx(1.0)
        assert Q[0, 0] == pytest.approx(3.0 * 0.5)

    def test_matches_constant_derivative_closed_form(self):
        q, dt = 1.7, 0.08
        for nu in (1, 2, 3):
            cm = constant_derivative_continuous(nu, q)
            A, _, Q = discretize(cm, dt)
            ref = constant_derivative_model(nu, dt, q, 1.0)
            np.testing.assert_allclose(A, ref.A, atol=1e-10)
            np.testing.assert_allclose(Q, ref.Q, atol=1e-10)

    def test_control_matrix(self):
        # dx/dt = -x + u: exact B = (1 - e^{-dt})
        cm = ContinuousModel(Ac=[[-1.0]], Bc=[[1.0]], Qc=[[0.0]])
        A, B, _ = discretize(cm, 0.3)
        assert A[0, 0] == pytest.approx(np.exp(-0.3), rel=1e-12)
        assert B[0, 0] == pytest.approx(1 - np.exp(-0.3), rel=1e-12)

    def test_q_psd_on_random_stable_systems(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            d = rng.integers(1, 5)
            Ac = rng.standard_normal((d, d)) - 2.0 * np.eye(d)
            L = rng.standard_normal((d, d)) * 0.5
            cm = ContinuousModel(Ac=Ac, Bc=np.zeros((d, 0)), Qc=L @ L.T)
            _, _, Q = discretize(cm, rng.uniform(0.01, 1.0))
            eigs = np.linalg.eigvalsh(Q)
            assert eigs.min() >= -1e-8

    def test_semigroup_property(self):
        rng = np.random.default_rng(8)
        Ac = rng.standard_normal((3, 3)) * 0.5
        L = rng.standard_normal((3, 3)) * 0.4
        cm = ContinuousModel(Ac=Ac, Bc=np.zeros((3, 0)), Qc=L @ L.T)
        dt = 0.2
        A1, _, Q1 = discretize(cm, dt)
        A2, _, Q2 = discretize(cm, 2 * dt)
        np.testing.assert_allclose(A2, A1 @ A1, atol=1e-9)
        np.testing.assert_allclose(Q2, A1 @ Q1 @ A1.T + Q1, atol=1e-9)

    def test_split_step_composition(self):
        rng = np.random.default_rng(9)
        Ac = rng.standard_normal((2, 2)) * 0.7
        cm = ContinuousModel(Ac=Ac, Bc=np.zeros((2, 0)), Qc=np.diag([0.0, 1.3]))
        a, b = 0.11, 0.35
        Aa, _, Qa = discretize(cm, a)
        Ab, _, Qb = discretize(cm, b)
        Aab, _, Qab = discretize(cm, a + b)
        np.testing.assert_allclose(Aab, Ab @ Aa, atol=1e-10)
        np.testing.assert_allclose(Qab, Ab @ Qa @ Ab.T + Qb, atol=1e-10)


class TestKalmanIrregular:
    def test_uniform_steps_match_uniform_pipeline(self):
        rng = np.random.default_rng(10)
        n, dt, q, r = 120, 0.02, 5.0, 0.3
        t = dt * np.arange(n)
        y = np.sin(t * 3) + 0.1 * rng.standard_normal(n)
        signal = Signal(Grid(t), y)

        model = constant_derivative_model(2, dt, q, r, y0=y[0])
        track_u = kalman_filter(model, y)
        xr_u, Pr_u = rts_smooth(track_u)

        cm = constant_derivative_continuous(2, q)
        track_i, xr_i, Pr_i = kalman_irregular(cm, model.C, model.R, model.x0,
                                               model.P0, signal)
        np.testing.assert_allclose(track_i.states, track_u.states, atol=1e-10)
        np.testing.assert_allclose(xr_i, xr_u, atol=1e-10)
        np.testing.assert_allclose(Pr_i, Pr_u, atol=1e-10)

    def test_deleted_sample_stays_continuous(self):
        rng = np.random.default_rng(11)
        n, dt = 300, 0.01
        t = dt * np.arange(n)
        truth = np.sin(2 * np.pi * t)
        y = truth + 0.05 * rng.standard_normal(n)
        keep = np.ones(n, dtype=bool)
        keep[n // 2] = False
        signal = Signal(Grid(t[keep]), y[keep])
        cm = constant_derivative_continuous(2, 100.0)
        C = np.array([[1.0, 0.0, 0.0]])
        _, xr, _ = kalman_irregular(cm, C, [[0.05**2]],
                                    [y[0], 0.0, 0.0], np.eye(3), signal)
        resid = xr[:, 0] - truth[keep]
        local = np.abs(np.diff(xr[:, 0]))
        gap_idx = n // 2 - 1
        assert np.abs(resid[gap_idx]) < 5 * np.std(resid)
        assert local[gap_idx] < 5 * np.median(local) + 5 * np.std(local)


class TestRobustMapSmooth:
    def test_quadratic_matches_rts_random_models(self):
        rng = np.random.default_rng(12)
        for trial in range(5):
            model = random_stable_model(rng)
            n = int(rng.integers(20, 201))
            _, ys = simulate_model(model, n, rng)
            track = kalman_filter(model, ys)
            xr, _ = rts_smooth(track)
            spec = RobustSpec(process_loss="quadratic", measurement_loss="quadratic")
            out = robust_map_smooth(model, ys, spec=spec)
            scale = max(np.max(np.abs(xr)), 1.0)
            assert np.max(np.abs(out.states - xr)) <= 1e-6 * scale
            assert out.converged

    def test_huge_huber_radius_matches_rts(self):
        rng = np.random.default_rng(13)
        model = random_stable_model(rng, d=2, p=1)
        _, ys = simulate_model(model, 80, rng)
        xr, _ = rts_smooth(kalman_filter(model, ys))
        spec = RobustSpec(process_loss="huber", measurement_loss="huber",
                          huber_m_process=1e6, huber_m_measurement=1e6)
        out = robust_map_smooth(model, ys, spec=spec)
        assert np.max(np.abs(out.states - xr)) <= 1e-6 * max(np.max(np.abs(xr)), 1.0)

    def test_outliers_inflated_q_huber_beats_rts(self):
        wins_huber, wins_l1 = 0, 0
        for seed in range(20):
            A, B, C, t, us, states, ys = cruise_data(seed=seed, n=400)
            rng = np.random.default_rng(1000 + seed)
            corrupt = rng.choice(400, 4, replace=False)
            spread = ys.max() - ys.min()
            ys_out = ys.copy()
            ys_out[corrupt] += rng.choice([-1, 1], 4) * rng.uniform(0.5, 1.5, 4) * spread
            model = fig11_model(A, B, C, 0.01, ys_out[0])
            model_bad = LinearGaussianModel(A=A, B=B, C=C, Q=1e5 * model.Q, R=model.R,
                                            x0=model.x0, P0=model.P0)
            xr, _ = rts_smooth(kalman_filter(model_bad, ys_out, us))
            rmse_rts = np.sqrt(np.mean((xr[:, 0] - states[:, 0]) ** 2))
            huber = robust_map_smooth(model_bad, ys_out, us, RobustSpec(
                process_loss="l1", measurement_loss="huber",
                huber_m_measurement=2.0, max_iter=60, tol=1e-6))
            rmse_huber = np.sqrt(np.mean((huber.states[:, 0] - states[:, 0]) ** 2))
            wins_huber += rmse_huber < rmse_rts
        assert wins_huber >= 18


class TestRtsdiff:
    def test_constant_signal(self):
        s = Signal(Grid.regular(200, 0.01), np.full(200, 1.8))
        r = rtsdiff(s, nu=2, q=10.0, r=0.01)
        assert np.max(np.abs(r.derivative[20:])) < 1e-3 * 1.8 + 1e-9
        np.testing.assert_allclose(r.smoothed, 1.8, atol=1e-6)

    def test_joint_scaling_invariance(self):
        rng = np.random.default_rng(14)
        t = 0.01 * np.arange(300)
        s = Signal(Grid(t), np.sin(2 * np.pi * t) + 0.1 * rng.standard_normal(300))
        a = rtsdiff(s, nu=2, q=3.0, r=0.2)
        b = rtsdiff(s, nu=2, q=30.0, r=2.0)
        np.testing.assert_allclose(a.derivative, b.derivative, atol=1e-9)
        np.testing.assert_allclose(a.smoothed, b.smoothed, atol=1e-9)

    def test_noiseless_ramp_slope(self):
        t = 0.01 * np.arange(400)
        slope = -2.5
        s = Signal(Grid(t), slope * t + 1.0)
        r = rtsdiff(s, nu=1, q=100.0, r=1e-4)
        interior = slice(50, 350)
        assert np.max(np.abs(r.derivative[interior] - slope)) < 1e-3 * abs(slope)

    def test_irregular_grid(self):
        rng = np.random.default_rng(15)
        t = np.cumsum(rng.uniform(0.005, 0.02, 300))
        truth = np.sin(2 * np.pi * t)
        s = Signal(Grid(t), truth + 0.05 * rng.standard_normal(300))
        r = rtsdiff(s, nu=2, q=50.0, r=0.05**2)
        deriv_truth = 2 * np.pi * np.cos(2 * np.pi * t)
        err = np.sqrt(np.mean((r.derivative[20:-5] - deriv_truth[20:-5]) ** 2))
        assert err < 0.2 * np.sqrt(np.mean(deriv_truth**2))


class TestRobustdiff:
    def test_huge_radius_matches_rtsdiff(self):
        rng = np.random.default_rng(16)
        t = 0.01 * np.arange(250)
        s = Signal(Grid(t), np.sin(2 * np.pi * t) + 0.1 * rng.standard_normal(250))
        base = rtsdiff(s, nu=2, q=100.0, r=1.0)
        spec = RobustSpec(process_loss="quadratic", measurement_loss="huber",
                          huber_m_measurement=1e6)
        robust = robustdiff(s, nu=2, q=100.0, r=1.0, spec=spec)
        scale = max(np.max(np.abs(base.derivative)), 1.0)
        assert np.max(np.abs(robust.derivative - base.derivative)) < 1e-6 * scale

    def test_outliers_paired_benchmark(self):
        wins = 0
        for seed in range(20):
            rng = np.random.default_rng(200 + seed)
            t = 0.01 * np.arange(400)
            truth = np.sin(2 * np.pi * t) + 0.3 * np.sin(4.4 * np.pi * t)
            deriv = (2 * np.pi * np.cos(2 * np.pi * t)
                     + 0.3 * 4.4 * np.pi * np.cos(4.4 * np.pi * t))
            y = truth + 0.1 * rng.standard_normal(400)
            idx = rng.choice(400, 4, replace=False)
            y[idx] += rng.choice([-1, 1], 4) * rng.uniform(0.5, 1.5, 4) * (y.max() - y.min())
            s = Signal(Grid(t), y)
            q, r = 1e4, 0.01  # r matches the 0.1-sigma noise so Huber sees outliers
            plain = rtsdiff(s, nu=2, q=q, r=r)
            spec = RobustSpec(process_loss="quadratic", measurement_loss="huber",
                              huber_m_measurement=2.0)
            robust = robustdiff(s, nu=2, q=q, r=r, spec=spec)
            rmse_plain = np.sqrt(np.mean((plain.derivative - deriv) ** 2))
            rmse_rob = np.sqrt(np.mean((robust.derivative - deriv) ** 2))
            wins += rmse_rob < rmse_plain
        assert wins >= 16

    def test_single_outlier_absorbed(self):
        rng = np.random.default_rng(17)
        t = 0.01 * np.arange(300)
        y = np.sin(2 * np.pi * t) + 0.05 * rng.standard_normal(300)
        y[150] += 5.0
        s = Signal(Grid(t), y)
        spec = RobustSpec(process_loss="quadratic", measurement_loss="huber",
                          huber_m_measurement=2.0)
        r = robustdiff(s, nu=2, q=1e3, r=0.05**2, spec=spec)
        neighbors = 0.5 * (r.smoothed[149] + r.smoothed[151])
        local_resid = np.std(np.diff(r.smoothed[100:200]))
        assert abs(r.smoothed[150] - neighbors) < 3 * max(local_resid, 0.01)
