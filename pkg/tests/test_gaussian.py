import numpy as np
import pytest
from numpy.testing import assert_allclose

from bdmfilter.gaussian import (
    DegenerateCovarianceError,
    GaussianBelief,
    SigmaPointConfig,
    SingularInnovationError,
    finite_difference_jacobian,
    gaussian_filter_predict,
    gaussian_product,
    make_sigma_points,
    measurement_stats,
    ukf_step,
    unscented_transform,
)
from bdmfilter.tracking import DEFAULT_X0, TurnModelParams, tracking_model, turn_noise_cov, turn_process

from conftest import kalman_filter, linear_model, random_spd, simulate_linear


def _weighted(sp):
    mean = sp.mean_weights @ sp.points
    dev = sp.points - mean
    return mean, (sp.cov_weights[:, None] * dev).T @ dev


class TestSigmaPoints:
    def test_standard_normal(self):
        sp = make_sigma_points(GaussianBelief(np.zeros(2), np.eye(2)))
        assert sp.points.shape == (5, 2)
        mean, cov = _weighted(sp)
        assert_allclose(mean, 0.0, atol=1e-14)
        assert_allclose(cov, np.eye(2), atol=1e-14)

    def test_axis_spread(self):
        sp = make_sigma_points(GaussianBelief([1.0, 2.0], np.diag([4.0, 9.0])))
        dev = sp.points[1:] - np.array([1.0, 2.0])
        s = np.sqrt(2.0)
        expected = np.array([[2 * s, 0], [0, 3 * s], [-2 * s, 0], [0, -3 * s]])
        assert_allclose(dev, expected, atol=1e-12)

    def test_zero_covariance_collapses_to_mean(self):
        sp = make_sigma_points(GaussianBelief([1.0, -1.0, 3.0], np.zeros((3, 3))))
        assert_allclose(sp.points, np.tile([1.0, -1.0, 3.0], (7, 1)))

    @pytest.mark.parametrize("alpha,beta,kappa", [(1.0, 2.0, 0.0), (0.5, 2.0, 1.0), (0.1, 2.0, 0.0)])
    def test_mean_weights_sum_to_one(self, alpha, beta, kappa):
        wm, _ = SigmaPointConfig(alpha, beta, kappa).weights(5)
        assert abs(wm.sum() - 1.0) < 1e-12

    def test_weighted_moments_reproduce_belief(self, rng):
        P = random_spd(rng, 4)
        m = rng.standard_normal(4)
        mean, cov = _weighted(make_sigma_points(GaussianBelief(m, P), SigmaPointConfig(0.7, 2.0, 1.0)))
        assert_allclose(mean, m, atol=1e-12)
        # the beta term only affects the centre weight, whose deviation is zero
        assert_allclose(cov, P, atol=1e-10)

    def test_indefinite_covariance_raises(self):
        with pytest.raises(DegenerateCovarianceError, match="degenerate covariance"):
            make_sigma_points(GaussianBelief(np.zeros(2), np.diag([1.0, -1.0])))

    def test_semidefinite_covariance_recovered_by_jitter(self):
        v = np.array([1.0, 2.0])
        sp = make_sigma_points(GaussianBelief(np.zeros(2), np.outer(v, v)))
        assert np.all(np.isfinite(sp.points))

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            SigmaPointConfig(alpha=0.0)
        with pytest.raises(ValueError):
            SigmaPointConfig(alpha=1.0, kappa=-2.0).lam(2)


class TestUnscentedTransform:
    def test_identity_map(self, rng):
        P, R = random_spd(rng, 3), random_spd(rng, 3)
        m = rng.standard_normal(3)
        mu, S, C = unscented_transform(lambda x: x, GaussianBelief(m, P), R)
        assert_allclose(mu, m, atol=1e-12)
        assert_allclose(S, P + R, atol=1e-10)
        assert_allclose(C, P, atol=1e-10)

    def test_affine_exactness(self, rng):
        A = rng.standard_normal((4, 3))
        b = rng.standard_normal(4)
        P, R = random_spd(rng, 3), random_spd(rng, 4)
        m = rng.standard_normal(3)
        mu, S, C = unscented_transform(lambda X: X @ A.T + b, GaussianBelief(m, P), R, vectorized=True)
        assert_allclose(mu, A @ m + b, atol=1e-10)
        assert_allclose(S, A @ P @ A.T + R, atol=1e-10)
        assert_allclose(C, P @ A.T, atol=1e-10)
        assert C.shape == (3, 4)
        assert_allclose(S, S.T, atol=0)

    def test_square_of_standard_normal(self):
        mu, S, _ = unscented_transform(lambda x: x**2, GaussianBelief([0.0], [[1.0]]))
        assert_allclose(mu, [1.0], atol=1e-14)

    def test_scalar_and_vectorized_agree(self, rng):
        P = random_spd(rng, 5, 0.01)
        b = GaussianBelief(np.asarray(DEFAULT_X0), P)
        params = TurnModelParams()
        a = unscented_transform(lambda x: turn_process(x, params), b)
        v = unscented_transform(lambda X: turn_process(X, params), b, vectorized=True)
        for u, w in zip(a, v):
            assert_allclose(u, w, atol=1e-12)


class TestPredict:
    def test_random_walk(self):
        model = linear_model(np.eye(2), np.eye(2), np.eye(2), np.eye(2))
        pred = gaussian_filter_predict(model, GaussianBelief(np.zeros(2), np.eye(2)))
        assert_allclose(pred.mean, 0.0, atol=1e-14)
        assert_allclose(pred.cov, 2 * np.eye(2), atol=1e-12)

    def test_zero_process_noise(self, rng):
        F = rng.standard_normal((3, 3))
        P = random_spd(rng, 3)
        model = linear_model(F, np.eye(3), np.zeros((3, 3)), np.eye(3))
        pred = gaussian_filter_predict(model, GaussianBelief(np.ones(3), P))
        assert_allclose(pred.mean, F @ np.ones(3), atol=1e-12)
        assert_allclose(pred.cov, F @ P @ F.T, atol=1e-10)

    def test_turn_model_matches_hand_rolled_sigma_points(self):
        params = TurnModelParams()
        model = tracking_model(params)
        Q = turn_noise_cov(params)
        x0 = np.asarray(DEFAULT_X0)
        pred = gaussian_filter_predict(model, GaussianBelief(x0, Q))

        # independent construction: eigen square root instead of Cholesky,
        # explicit per-point sin/cos evaluation
        d = 5
        vals, vecs = np.linalg.eigh(Q)
        root = vecs * np.sqrt(vals)
        pts = [x0] + [x0 + np.sqrt(d) * root[:, i] for i in range(d)] + [x0 - np.sqrt(d) * root[:, i] for i in range(d)]

        def f(x):
            a, ad, b, bd, w = x
            z = params.zeta_t
            return np.array([
                a + np.sin(w * z) / w * ad + (np.cos(w * z) - 1) / w * bd,
                np.cos(w * z) * ad - np.sin(w * z) * bd,
                b + (1 - np.cos(w * z)) / w * ad + np.sin(w * z) / w * bd,
                np.sin(w * z) * ad + np.cos(w * z) * bd,
                w,
            ])

        Y = np.array([f(p) for p in pts])
        wm = np.full(2 * d + 1, 0.5 / d)
        wm[0] = 0.0
        wc = wm.copy()
        wc[0] = 2.0
        mean = wm @ Y
        cov = (wc[:, None] * (Y - mean)).T @ (Y - mean) + Q
        # an eigen root and a Cholesky root give different points; for a
        # nonlinear map the moments agree only to higher order
        assert_allclose(pred.mean, mean, rtol=1e-8, atol=1e-9)
        assert_allclose(pred.cov, cov, rtol=1e-5, atol=1e-9)


class TestUkf:
    def test_scalar_conjugate_update(self):
        model = linear_model([[1.0]], [[1.0]], [[0.0]], [[1.0]])
        post = ukf_step(model, GaussianBelief([0.0], [[1.0]]), [1.0])
        assert_allclose(post.mean, [0.5], atol=1e-14)
        assert_allclose(post.cov, [[0.5]], atol=1e-14)

    def test_measurement_at_predicted_mean(self, rng):
        H = rng.standard_normal((2, 3))
        model = linear_model(np.eye(3), H, 0.1 * np.eye(3), np.eye(2))
        prior = GaussianBelief(rng.standard_normal(3), np.eye(3))
        post = ukf_step(model, prior, H @ prior.mean)
        assert_allclose(post.mean, prior.mean, atol=1e-12)

    def test_equals_kalman_filter(self, cv_model):
        model, F, H = cv_model
        _, ys = simulate_linear(F, H, model.Q, model.R, [0.0, 1.0], 100, seed=3)
        km, kP = kalman_filter(F, H, model.Q, model.R, np.zeros(2), np.eye(2), ys)
        b = GaussianBelief(np.zeros(2), np.eye(2))
        for k, y in enumerate(ys):
            b = ukf_step(model, b, y)
            assert_allclose(b.mean, km[k], atol=1e-8)
            assert_allclose(b.cov, kP[k], atol=1e-8)

    def test_wrong_measurement_size(self, cv_model):
        model, _, _ = cv_model
        with pytest.raises(ValueError, match="expected 3"):
            ukf_step(model, GaussianBelief(np.zeros(2), np.eye(2)), [1.0, 2.0])

    def test_singular_innovation(self):
        model = linear_model([[1.0]], [[0.0]], [[0.0]], [[1.0]])
        model.R = np.zeros((1, 1))
        with pytest.raises(SingularInnovationError):
            measurement_stats(model, GaussianBelief([0.0], [[1.0]]))

    def test_tracking_model_close_to_kalman_oracle(self):
        """Unbiased tracking run: UKF and an EKF cross-check reach similar accuracy."""
        from bdmfilter.tracking import BiasScenario, SensorArray, simulate

        params, sensors = TurnModelParams(), SensorArray.rectangle()
        model = tracking_model(params, sensors)
        traj = simulate(params, sensors, BiasScenario("none", 0.0), 200, rng_seed=5)
        Q = turn_noise_cov(params)
        ukf = GaussianBelief(np.asarray(DEFAULT_X0), Q)
        m, P = np.asarray(DEFAULT_X0), Q.copy()
        e_ukf, e_ekf = [], []
        for k in range(traj.T):
            ukf = ukf_step(model, ukf, traj.clean_measurements[k])
            F = model.F(m)
            m, P = model.f(m[None])[0], F @ P @ F.T + Q
            H = model.H(m)
            S = H @ P @ H.T + model.R
            K = P @ H.T @ np.linalg.inv(S)
            m, P = m + K @ (traj.clean_measurements[k] - model.h(m[None])[0]), P - K @ S @ K.T
            e_ukf.append(np.sum((ukf.mean - traj.states[k])[[0, 2]] ** 2))
            e_ekf.append(np.sum((m - traj.states[k])[[0, 2]] ** 2))
        r_ukf, r_ekf = np.sqrt(np.mean(e_ukf)), np.sqrt(np.mean(e_ekf))
        assert r_ukf < 5.0
        assert abs(r_ukf - r_ekf) < 0.25 * r_ekf


class TestGaussianProduct:
    def test_symmetric(self):
        m, S = gaussian_product(np.zeros(2), np.eye(2), np.zeros(2), np.eye(2))
        assert_allclose(m, 0.0)
        assert_allclose(S, 0.5 * np.eye(2))

    def test_scalar_average(self):
        m, S = gaussian_product([1.0], [[1.0]], [3.0], [[1.0]])
        assert_allclose(m, [2.0])
        assert_allclose(S, [[0.5]])

    def test_density_grid_oracle(self):
        m1, s1, m2, s2 = -0.7, 0.8, 1.9, 2.5
        x = np.linspace(-15, 15, 200001)
        dens = np.exp(-0.5 * (x - m1) ** 2 / s1 - 0.5 * (x - m2) ** 2 / s2)
        dx = x[1] - x[0]
        dens /= dens.sum() * dx
        mean = np.sum(x * dens) * dx
        var = np.sum((x - mean) ** 2 * dens) * dx
        m, S = gaussian_product([m1], [[s1]], [m2], [[s2]])
        assert_allclose(m, [mean], atol=1e-6)
        assert_allclose(S, [[var]], atol=1e-6)

    def test_commutative(self, rng):
        S1, S2 = random_spd(rng, 3), random_spd(rng, 3)
        m1, m2 = rng.standard_normal(3), rng.standard_normal(3)
        a = gaussian_product(m1, S1, m2, S2)
        b = gaussian_product(m2, S2, m1, S1)
        assert_allclose(a[0], b[0], atol=1e-12)
        assert_allclose(a[1], b[1], atol=1e-12)
        assert_allclose(a[1], a[1].T, atol=0)
        assert np.all(np.linalg.eigvalsh(a[1]) > 0)

    def test_singular_input(self):
        with pytest.raises(SingularInnovationError):
            gaussian_product([0.0], [[0.0]], [1.0], [[1.0]])


def test_finite_difference_jacobian_matches_analytic():
    params = TurnModelParams()
    model = tracking_model(params)
    x = np.array([100.0, 8.0, -50.0, 3.0, 0.04])
    for fun, jac in ((model.f, model.F), (model.h, model.H)):
        J = finite_difference_jacobian(fun, x, vectorized=True)
        assert_allclose(J, jac(x), rtol=1e-6, atol=1e-7)


def test_model_defaults_to_finite_differences():
    model = linear_model([[2.0, 1.0], [0.0, 1.0]], [[1.0, -1.0]], np.eye(2), [[1.0]])
    model.f_jacobian = None
    model.h_jacobian = None
    assert_allclose(model.F(np.zeros(2)), [[2.0, 1.0], [0.0, 1.0]], atol=1e-8)
    assert_allclose(model.H(np.zeros(2)), [[1.0, -1.0]], atol=1e-8)
