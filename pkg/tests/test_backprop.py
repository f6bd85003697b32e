import numpy as np
import pytest

from fewstep.backprop import backward, check_gradients
from fewstep.coeffs import SolverCoefficients, init_preset
from fewstep.grids import LearnableTimeParams, heuristic_grid, materialize
from fewstep.scores import CountingScoreModel
from fewstep.solvers import solve


def _random_params(schedule, n, rng, offset_scale=0.3):
    grid = heuristic_grid(schedule, n, "logsnr")
    params = LearnableTimeParams.from_grid(grid, schedule)
    params.xi += 0.1 * rng.standard_normal(params.xi.shape)
    delta = params.clip_fraction * np.min(-np.diff(materialize(params, schedule).steps))
    params.xi_c += offset_scale * delta * rng.standard_normal(params.xi_c.shape)
    return params


class TestLinearChain:
    def test_zero_model_adjoint_is_scaled_identity(self, vp, zero_model):
        grid = heuristic_grid(vp, 5, "logsnr")
        coeffs = init_preset("lms", 2, 5, "ipndm", schedule=vp, grid=grid)
        x = np.array([1.0, -3.0])
        trace = solve(coeffs, vp, grid, zero_model, x)
        res = backward(trace, coeffs, vp, zero_model, trace.terminal, grid=grid)
        ratio = float(vp.alpha(vp.t_min) / vp.alpha(vp.T))
        assert np.allclose(res.grad_x0, ratio * trace.terminal, rtol=1e-12)
        assert np.all(np.isfinite(res.grad_coeffs))

    def test_linearity_in_cotangent(self, ve, mixture, rng):
        grid = heuristic_grid(ve, 4, "logsnr")
        coeffs = init_preset("lms", 2, 4, "ipndm", schedule=ve, grid=grid)
        x = rng.standard_normal(2)
        trace = solve(coeffs, ve, grid, mixture, x)
        cot = rng.standard_normal(2)
        one = backward(trace, coeffs, ve, mixture, cot, grid=grid)
        two = backward(trace, coeffs, ve, mixture, 2.0 * cot, grid=grid)
        assert np.allclose(2.0 * one.grad_coeffs, two.grad_coeffs, rtol=1e-12)
        assert np.allclose(2.0 * one.grad_x0, two.grad_x0, rtol=1e-12)
        assert np.allclose(2.0 * one.grad_steps, two.grad_steps, rtol=1e-12)


class TestFiniteDifferenceAgreement:
    @pytest.mark.parametrize("kind,preset,order", [
        ("lms", "gaussian", 2),
        ("pc", "gaussian", 2),
        ("ss", "gaussian", 2),
    ])
    def test_blocks_match_fd(self, ve, mixture, rng, kind, preset, order):
        params = _random_params(ve, 4, rng)
        coeffs = init_preset(kind, order, 4, preset, seed=int(rng.integers(2**31)))
        coeffs.values *= 0.5
        x0 = ve.tilde_sigma * rng.standard_normal(2)
        target = rng.standard_normal(2)
        report = check_gradients(coeffs, ve, mixture, x0, target, params=params)
        assert report["max_relative_deviation"] <= 1e-5

    def test_data_prediction_blocks_match_fd(self, ve, mixture, rng):
        grid = heuristic_grid(ve, 4, "logsnr")
        coeffs = init_preset("lms", 2, 4, "gaussian", seed=11)
        coeffs.prediction = "data"
        x0 = ve.tilde_sigma * rng.standard_normal(2)
        report = check_gradients(coeffs, ve, mixture, x0, rng.standard_normal(2), grid=grid)
        assert report["max_relative_deviation"] <= 1e-5

    def test_zero_loss_gives_zero_gradients(self, ve, mixture):
        grid = heuristic_grid(ve, 4, "logsnr")
        coeffs = init_preset("lms", 2, 4, "ipndm", schedule=ve, grid=grid)
        x0 = np.array([1.0, 2.0])
        target = solve(coeffs, ve, grid, mixture, x0).terminal
        report = check_gradients(coeffs, ve, mixture, x0, target, grid=grid)
        trace = solve(coeffs, ve, grid, mixture, x0)
        res = backward(trace, coeffs, ve, mixture, np.zeros(2), grid=grid)
        assert report["loss"] == 0.0
        assert np.allclose(res.grad_coeffs, 0.0) and np.allclose(res.grad_x0, 0.0)


class TestDeadParameters:
    def test_ss_inert_mixing_entries_get_zero_gradient(self, ve, mixture, rng):
        grid = heuristic_grid(ve, 4, "logsnr")
        coeffs = init_preset("ss", 3, 4, "gaussian", seed=5)
        x = rng.standard_normal(2)
        trace = solve(coeffs, ve, grid, mixture, x)
        res = backward(trace, coeffs, ve, mixture, np.ones(2), grid=grid)
        for i in range(1, 5):
            gmat = res.grad_coeffs[coeffs.ss_a_slice(i)].reshape(3, 2)
            # row j may use only entries l < j; the rest are structurally inert
            assert gmat[0, 0] == 0.0 and gmat[0, 1] == 0.0 and gmat[1, 1] == 0.0

    def test_disabled_final_corrector_row_gets_zero_gradient(self, ve, mixture, rng):
        grid = heuristic_grid(ve, 4, "logsnr")
        coeffs = init_preset("pc", 2, 4, "unipc", schedule=ve, grid=grid)
        x = rng.standard_normal(2)
        trace = solve(coeffs, ve, grid, mixture, x, final_corrector=False)
        res = backward(trace, coeffs, ve, mixture, np.ones(2), grid=grid)
        assert np.allclose(res.grad_coeffs[coeffs.corrector_slice(4)], 0.0)
        assert not np.allclose(res.grad_coeffs[coeffs.corrector_slice(3)], 0.0)


def test_tied_gradient_is_sum_of_untied_rows(ve, mixture, rng):
    n, k = 7, 3
    grid = heuristic_grid(ve, n, "logsnr")
    tied = init_preset("lms", k, n, "ipndm", schedule=ve, grid=grid, tied=True)
    untied = init_preset("lms", k, n, "ipndm", schedule=ve, grid=grid)
    x = rng.standard_normal(2)
    cot = rng.standard_normal(2)

    trace_t = solve(tied, ve, grid, mixture, x)
    trace_u = solve(untied, ve, grid, mixture, x)
    assert np.allclose(trace_t.terminal, trace_u.terminal)

    res_t = backward(trace_t, tied, ve, mixture, cot, grid=grid)
    res_u = backward(trace_u, untied, ve, mixture, cot, grid=grid)
    shared = res_t.grad_coeffs[tied.b_slice(k)]
    summed = sum(res_u.grad_coeffs[untied.b_slice(i)] for i in range(k, n + 1))
    assert np.allclose(shared, summed, rtol=1e-12)


class TestRematerialization:
    def test_dropped_cache_reproduces_gradients(self, ve, mixture, rng):
        grid = heuristic_grid(ve, 5, "logsnr")
        for kind, preset in (("lms", "ipndm"), ("pc", "unipc")):
            coeffs = init_preset(kind, 2, 5, preset, schedule=ve, grid=grid)
            x = rng.standard_normal(2)
            trace = solve(coeffs, ve, grid, mixture, x)
            cot = rng.standard_normal(2)
            with_cache = backward(trace, coeffs, ve, mixture, cot, grid=grid)
            trace.eps_cache = None
            without = backward(trace, coeffs, ve, mixture, cot, grid=grid)
            assert np.allclose(with_cache.grad_coeffs, without.grad_coeffs, rtol=1e-14)
            assert np.allclose(with_cache.grad_x0, without.grad_x0, rtol=1e-14)

    def test_backward_evaluation_budget(self, ve, mixture, rng):
        # memory contract: recomputing evaluations instead of storing model
        # internals keeps backward within 2x the forward evaluation count
        grid = heuristic_grid(ve, 6, "logsnr")
        coeffs = init_preset("lms", 3, 6, "ipndm", schedule=ve, grid=grid)
        counted = CountingScoreModel(mixture)
        x = rng.standard_normal(2)
        trace = solve(coeffs, ve, grid, counted, x)
        forward_evals = counted.n_epsilon
        counted.reset()
        trace.eps_cache = None
        backward(trace, coeffs, ve, counted, np.ones(2), grid=grid)
        assert counted.n_epsilon <= forward_evals
        assert counted.n_epsilon + counted.n_vjp <= 2 * forward_evals


def test_mismatched_trace_rejected(ve, mixture):
    grid = heuristic_grid(ve, 4, "logsnr")
    coeffs = init_preset("lms", 2, 4, "ipndm", schedule=ve, grid=grid)
    trace = solve(coeffs, ve, grid, mixture, np.ones(2))
    other = init_preset("pc", 2, 4, "unipc", schedule=ve, grid=grid)
    with pytest.raises(ValueError):
        backward(trace, other, ve, mixture, np.ones(2), grid=grid)
    with pytest.raises(ValueError):
        backward(trace, coeffs, ve, mixture, np.ones(3), grid=grid)
    with pytest.raises(ValueError):
        backward(trace, coeffs, ve, mixture, np.ones(2))
