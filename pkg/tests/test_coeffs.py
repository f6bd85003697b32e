import numpy as np
import pytest
from scipy.integrate import quad

from fewstep.coeffs import (SolverCoefficients, init_preset, table_param_count,
                            _unified_corrector_pool, _unified_predictor_row)
from fewstep.grids import heuristic_grid


class TestParameterCounts:
    @pytest.mark.parametrize("kind,formula", [
        ("lms", lambda k, n: k * (2 * n + 1 - k) // 2),
        ("ss", lambda k, n: (k * k + k - 1) * n),
        ("pc", lambda k, n: k * (2 * n + 1 - k)),
    ])
    def test_formulas_enumerated(self, kind, formula):
        for k in range(1, 5):
            for n in range(k, 11):
                coeffs = SolverCoefficients(kind=kind, order=k, n_steps=n)
                assert coeffs.param_count() == formula(k, n) == table_param_count(kind, k, n)
                assert coeffs.values.size == coeffs.param_count()

    def test_explicit_instances(self):
        assert table_param_count("lms", 3, 3) == 6
        assert table_param_count("pc", 3, 3) == 12

    def test_warmup_rows_hold_exactly_i_coefficients(self):
        coeffs = SolverCoefficients(kind="lms", order=4, n_steps=8)
        for i in range(1, 9):
            sl = coeffs.b_slice(i)
            assert sl.stop - sl.start == min(4, i)

    def test_order_cannot_exceed_step_count(self):
        with pytest.raises(ValueError):
            SolverCoefficients(kind="lms", order=6, n_steps=4)

    def test_index_map_partitions_vector(self):
        for kind, k, n in (("lms", 3, 7), ("pc", 2, 5), ("ss", 3, 4)):
            coeffs = SolverCoefficients(kind=kind, order=k, n_steps=n)
            seen = np.zeros(coeffs.values.size, dtype=int)
            for entry in coeffs.index_map():
                seen[entry["start"] : entry["stop"]] += 1
            assert np.all(seen == 1)

    def test_tied_lms_only(self):
        with pytest.raises(ValueError):
            SolverCoefficients(kind="ss", order=2, n_steps=4, tied=True)
        tied = SolverCoefficients(kind="lms", order=3, n_steps=8, tied=True)
        assert tied.param_count() == 3 + 3  # warmup rows 1,2 + shared row of 3
        assert tied.b_slice(3) == tied.b_slice(7)


class TestPresets:
    def test_exponential_multistep_matches_quad_oracle(self, ve):
        grid = heuristic_grid(ve, 6, "logsnr")
        lams = grid.lambdas(ve)
        coeffs = init_preset("lms", 3, 6, "adams_bashforth", schedule=ve, grid=grid)
        i = 5
        past = lams[i - 1 :: -1][:3]
        h = lams[i] - lams[i - 1]

        def basis(lam, j):
            out = 1.0
            for m, node in enumerate(past):
                if m != j:
                    out *= (lam - node) / (past[j] - node)
            return out

        for j in range(3):
            oracle, _ = quad(lambda lam: np.exp(lams[i] - lam) * basis(lam, j),
                             lams[i - 1], lams[i], epsabs=1e-14, epsrel=1e-13)
            oracle /= np.expm1(h)
            assert abs(coeffs.values[coeffs.b_slice(i)][j] - oracle) <= 1e-12

    def test_exponential_rows_sum_to_one(self, ve):
        grid = heuristic_grid(ve, 8, "logsnr")
        coeffs = init_preset("lms", 3, 8, "adams_bashforth", schedule=ve, grid=grid)
        for i in range(1, 9):
            assert abs(coeffs.values[coeffs.b_slice(i)].sum() - 1.0) <= 1e-12

    def test_adams_bashforth_small_h_limit(self, ve):
        # as h -> 0 the exponential weights approach the classical (3/2, -1/2)
        grid = heuristic_grid(ve, 400, "logsnr")
        coeffs = init_preset("lms", 2, 400, "adams_bashforth", schedule=ve, grid=grid)
        row = coeffs.values[coeffs.b_slice(200)]
        assert np.allclose(row, [1.5, -0.5], atol=5e-3)

    def test_flat_lagrange_matches_variable_step_two_step_formula(self, ve):
        grid = heuristic_grid(ve, 6, "quadratic")
        lams = grid.lambdas(ve)
        coeffs = init_preset("lms", 2, 6, "dpmpp", schedule=ve, grid=grid)
        for i in range(2, 7):
            r = (lams[i - 1] - lams[i - 2]) / (lams[i] - lams[i - 1])
            expected = np.array([1.0 + 1.0 / (2 * r), -1.0 / (2 * r)])
            assert np.allclose(coeffs.values[coeffs.b_slice(i)], expected, rtol=1e-10)

    def test_classical_constants_preset(self, ve):
        grid = heuristic_grid(ve, 6, "logsnr")
        coeffs = init_preset("lms", 3, 6, "ipndm", schedule=ve, grid=grid)
        assert np.allclose(coeffs.values[coeffs.b_slice(1)], [1.0])
        assert np.allclose(coeffs.values[coeffs.b_slice(2)], [1.5, -0.5])
        for i in range(3, 7):
            assert np.allclose(coeffs.values[coeffs.b_slice(i)],
                               np.array([23.0, -16.0, 5.0]) / 12.0)

    def test_warmup_first_row_is_unit_weight(self, ve):
        grid = heuristic_grid(ve, 5, "logsnr")
        for preset in ("ipndm", "dpmpp", "adams_bashforth", "unipc"):
            kind = "pc" if preset == "unipc" else "lms"
            coeffs = init_preset(kind, 3, 5, preset, schedule=ve, grid=grid)
            assert np.allclose(coeffs.values[coeffs.b_slice(1)], [1.0])

    def test_gaussian_preset_seeded_reproducible(self):
        a = init_preset("ss", 3, 5, "gaussian", seed=123)
        b = init_preset("ss", 3, 5, "gaussian", seed=123)
        c = init_preset("ss", 3, 5, "gaussian", seed=124)
        assert np.array_equal(a.values, b.values)
        assert not np.array_equal(a.values, c.values)

    def test_alias_names_accepted(self, ve):
        grid = heuristic_grid(ve, 4, "logsnr")
        coeffs = init_preset("lms", 2, 4, "iPNDM-like", schedule=ve, grid=grid)
        assert np.allclose(coeffs.values[coeffs.b_slice(3)], [1.5, -0.5])

    def test_incompatible_preset_kind_rejected(self, ve):
        grid = heuristic_grid(ve, 4, "logsnr")
        with pytest.raises(ValueError):
            init_preset("ss", 2, 4, "ipndm", schedule=ve, grid=grid)
        with pytest.raises(ValueError):
            init_preset("ss", 3, 4, "dpmpp", schedule=ve, grid=grid)
        with pytest.raises(ValueError):
            init_preset("lms", 2, 4, "no-such-preset", schedule=ve, grid=grid)

    def test_grid_required_for_derived_presets(self):
        with pytest.raises(ValueError):
            init_preset("lms", 2, 4, "adams_bashforth")


class TestCorrectorParametrization:
    def test_pool_weights_sum_to_one(self, ve):
        grid = heuristic_grid(ve, 5, "logsnr")
        coeffs = init_preset("pc", 3, 5, "unipc", schedule=ve, grid=grid)
        for i in range(1, 6):
            assert abs(coeffs.corrector_weights(i).sum() - 1.0) <= 1e-12
            assert coeffs.corrector_weights(i).size == coeffs.q(i) + 1

    def test_unified_weights_interpolation_exactness(self):
        # order-q weights integrate e^{-lam} * poly(lam) exactly for deg < q
        lams_past = np.array([0.0, -0.45, -1.05])
        lam_next = 0.6
        row = _unified_predictor_row(lams_past, lam_next)
        h = lam_next - lams_past[0]
        for deg in range(3):
            vals = (lams_past - lams_past[0]) ** deg
            target, _ = quad(lambda u: np.exp(lam_next - u) * (u - lams_past[0]) ** deg,
                             lams_past[0], lam_next, epsabs=1e-14)
            assert abs(np.dot(row, vals) * np.expm1(h) - target) <= 1e-10

    def test_corrector_pool_exactness_includes_new_node(self):
        lams_past = np.array([0.0, -0.5])
        lam_next = 0.55
        pool = _unified_corrector_pool(lams_past, lam_next)
        nodes = np.array([lam_next, lams_past[0], lams_past[1]])
        h = lam_next - lams_past[0]
        for deg in range(3):
            vals = (nodes - lams_past[0]) ** deg
            target, _ = quad(lambda u: np.exp(lam_next - u) * (u - lams_past[0]) ** deg,
                             lams_past[0], lam_next, epsabs=1e-14)
            assert abs(np.dot(pool, vals) * np.expm1(h) - target) <= 1e-10


def test_consistency_projection_normalizes_rows(ve):
    grid = heuristic_grid(ve, 5, "logsnr")
    coeffs = init_preset("lms", 3, 5, "gaussian", seed=3)
    coeffs.project_sum_to_one()
    for i in range(1, 6):
        assert abs(coeffs.values[coeffs.b_slice(i)].sum() - 1.0) <= 1e-9
    ss = init_preset("ss", 2, 5, "gaussian", seed=4)
    ss.project_sum_to_one()
    for i in range(1, 6):
        assert abs(ss.values[ss.ss_b_slice(i)].sum() - 1.0) <= 1e-9
