import numpy as np
import pytest

from fewstep.scores import CountingScoreModel, GaussianMixtureScore, default_mixture


def direct_mixture_score(model, schedule, x, t):
    """Independent direct-density gradient: plain density sum, no log-sum-exp."""
    a, s = float(schedule.alpha(t)), float(schedule.sigma(t))
    v = a * a * model.scales**2 + s * s
    dens = 0.0
    grad = np.zeros_like(x)
    for w, mu, vj in zip(model.weights, model.means, v):
        r = x - a * mu
        nj = w * np.exp(-0.5 * np.dot(r, r) / vj) / (2 * np.pi * vj) ** (model.dim / 2)
        dens += nj
        grad += nj * (-r / vj)
    return grad / dens


class TestEpsilon:
    def test_zero_at_symmetric_point(self, ve):
        model = GaussianMixtureScore.isotropic(2, scale=1.0)
        assert np.allclose(model.epsilon(ve, np.zeros(2), 1.0), 0.0)

    def test_unit_balance_point(self, ve):
        # at t=1 on this schedule alpha=sigma=1, so eps = x * 1/(1+1)
        model = GaussianMixtureScore.isotropic(2, scale=1.0)
        out = model.epsilon(ve, np.array([2.0, 0.0]), 1.0)
        assert np.allclose(out, [1.0, 0.0], atol=1e-14)

    def test_single_component_mixture_degenerates(self, ve):
        iso = GaussianMixtureScore.isotropic(2, scale=0.7, mean=[0.3, -0.4])
        mix = GaussianMixtureScore(weights=[1.0], means=[[0.3, -0.4]], scales=[0.7])
        x = np.array([1.1, 0.2])
        assert np.allclose(iso.epsilon(ve, x, 2.5), mix.epsilon(ve, x, 2.5))

    def test_matches_direct_density_score(self, ve, mixture, rng):
        for _ in range(50):
            x = rng.normal(scale=3.0, size=2)
            t = float(rng.uniform(ve.t_min, ve.T))
            eps = mixture.epsilon(ve, x, t)
            score = direct_mixture_score(mixture, ve, x, t)
            assert np.allclose(eps, -float(ve.sigma(t)) * score, rtol=1e-10, atol=1e-12)

    def test_batched_matches_loop(self, ve, mixture, rng):
        xs = rng.normal(size=(5, 2))
        batch = mixture.epsilon(ve, xs, 3.0)
        rows = np.stack([mixture.epsilon(ve, x, 3.0) for x in xs])
        assert np.allclose(batch, rows)

    def test_non_finite_input_rejected(self, ve, mixture):
        with pytest.raises(FloatingPointError):
            mixture.epsilon(ve, np.array([np.nan, 0.0]), 1.0)

    def test_stable_at_extreme_log_snr(self, edm, mixture):
        out = mixture.epsilon(edm, np.array([50.0, -30.0]), edm.T)
        assert np.all(np.isfinite(out))
        out = mixture.epsilon(edm, np.array([0.5, 0.1]), edm.t_min)
        assert np.all(np.isfinite(out))


class TestValidation:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            GaussianMixtureScore(weights=[0.5, 0.4], means=[[0.0], [1.0]], scales=[1.0, 1.0])

    def test_scales_positive(self):
        with pytest.raises(ValueError):
            GaussianMixtureScore(weights=[1.0], means=[[0.0]], scales=[0.0])

    def test_default_mixture_weights(self):
        model = default_mixture(2)
        assert abs(model.weights.sum() - 1.0) <= 1e-12
        assert model.n_components == 3

    def test_high_dimension_supported(self, ve):
        model = default_mixture(64)
        out = model.epsilon(ve, np.ones(64), 2.0)
        assert out.shape == (64,)


class TestDerivatives:
    def test_isotropic_vjp_is_scalar_multiple(self, ve):
        model = GaussianMixtureScore.isotropic(2, scale=1.0)
        t = 2.0
        a, s = float(ve.alpha(t)), float(ve.sigma(t))
        cot = np.array([0.3, -0.7])
        out = model.epsilon_vjp(ve, np.array([0.9, 0.4]), t, cot)
        assert np.allclose(out, s / (a * a + s * s) * cot, rtol=1e-12)

    def test_zero_cotangent(self, ve, mixture):
        out = mixture.epsilon_vjp(ve, np.ones(2), 1.5, np.zeros(2))
        assert np.allclose(out, 0.0)

    def test_vjp_matches_finite_differences(self, ve, mixture, rng):
        step = 1e-5
        worst = 0.0
        for _ in range(100):
            x = rng.normal(scale=2.5, size=2)
            t = float(rng.uniform(ve.t_min, ve.T))
            cot = rng.normal(size=2)
            analytic = mixture.epsilon_vjp(ve, x, t, cot)
            fd = np.zeros(2)
            for i in range(2):
                e = np.zeros(2)
                e[i] = step
                fd[i] = np.dot(cot, mixture.epsilon(ve, x + e, t)
                               - mixture.epsilon(ve, x - e, t)) / (2 * step)
            denom = max(np.linalg.norm(fd), 1e-10)
            worst = max(worst, np.linalg.norm(analytic - fd) / denom)
        assert worst <= 1e-5

    def test_time_partial_matches_finite_differences(self, ve, mixture, rng):
        for _ in range(30):
            x = rng.normal(scale=2.0, size=2)
            t = float(rng.uniform(2 * ve.t_min, 0.9 * ve.T))
            dt = 1e-6
            fd = (mixture.epsilon(ve, x, t + dt) - mixture.epsilon(ve, x, t - dt)) / (2 * dt)
            analytic = mixture.epsilon_time_partial(ve, x, t)
            assert np.allclose(analytic, fd, rtol=1e-5, atol=1e-8)


class TestDataPrediction:
    def test_round_trip_identity(self, ve, mixture, rng):
        for _ in range(20):
            x = rng.normal(scale=2.0, size=2)
            t = float(rng.uniform(ve.t_min, ve.T))
            a, s = float(ve.alpha(t)), float(ve.sigma(t))
            xhat = mixture.data_prediction(ve, x, t)
            eps_back = (x - a * xhat) / s
            assert np.allclose(eps_back, mixture.epsilon(ve, x, t), rtol=0, atol=1e-12)


def test_counting_wrapper_tracks_calls(ve, mixture):
    counted = CountingScoreModel(mixture)
    counted.epsilon(ve, np.ones((3, 2)), 1.0)
    counted.epsilon_vjp(ve, np.ones(2), 1.0, np.ones(2))
    assert counted.n_epsilon == 3 and counted.n_vjp == 1
    counted.reset()
    assert counted.n_epsilon == 0
