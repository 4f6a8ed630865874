from fractions import Fraction as Fr

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

import sparse_mefm.dafl as dafl
from sparse_mefm.dafl import (
    TuningConfig,
    active_tolerance,
    build_penalty,
    cp_statistic,
    degrees_of_freedom,
    extract_blocks,
    final_effects,
    fit_sparse_effects,
    kkt_certificate,
    solve_genlasso,
    tune_lambda,
)
from sparse_mefm.errors import ConvergenceError, DataValidityError, FitError

from oracles import dense_nullity, dual_pg, lp_kkt_residual, primal_objective

Y4 = np.array([0.2, 1.0, 1.2, 0.1])
LAM4 = 0.05


@st.composite
def nonneg_series(draw, max_len=30):
    T = draw(st.integers(2, max_len))
    vals = draw(st.lists(st.floats(0.05, 5.0), min_size=T, max_size=T))
    zeros = draw(st.lists(st.booleans(), min_size=T, max_size=T))
    return np.where(zeros, 0.0, vals)


def test_penalty_weights():
    pen = build_penalty(np.array([1.0, 2.0, 0.5]))
    assert_allclose(pen.lasso_weights, [1.0, 0.5, 2.0])
    assert_allclose(pen.fused_weights, [0.5, 0.5])
    assert not pen.hard_zero.any() and not pen.hard_fuse.any()


def test_penalty_hard_rows():
    pen = build_penalty(np.array([0.0, 0.0, 1.0, 0.0]))
    assert_array_equal(pen.hard_zero, [True, True, False, True])
    assert_array_equal(pen.hard_fuse, [True, False, False])
    assert np.isinf(pen.lasso_weights[0]) and np.isinf(pen.fused_weights[0])
    D = pen.dense(hard_scale=7.0)
    assert D.shape == (7, 4)
    assert_allclose(D[0], [-7, 7, 0, 0])
    assert_allclose(D[5], [0, 0, 1, 0])


@pytest.mark.parametrize("y", [np.array([1.0, -0.1]), np.array([1.0, np.nan]), np.array([1.0])])
def test_penalty_rejects_bad_series(y):
    with pytest.raises(DataValidityError):
        build_penalty(y)


def test_t4_instance_exact():
    # stationarity worked by hand: theta_2 = 1 - 7/6 lam, theta_3 = 1.2 - 5/2 lam
    sol = solve_genlasso(Y4, build_penalty(Y4), LAM4)
    expected = np.array([0.0, 113 / 120, 43 / 40, 0.0])
    assert_allclose(sol.theta, expected, atol=1e-14)
    assert sol.theta[0] == 0.0 and sol.theta[3] == 0.0
    y = [Fr(1, 5), Fr(1), Fr(6, 5), Fr(1, 10)]
    th = [Fr(0), Fr(113, 120), Fr(43, 40), Fr(0)]
    lam = Fr(1, 20)
    fused = sum(abs(th[t + 1] - th[t]) / max(y[t], y[t + 1]) for t in range(3))
    lasso = sum(abs(th[t]) / y[t] for t in range(4))
    obj = sum((a - b) ** 2 for a, b in zip(y, th)) / 2 + lam * (fused + lasso)
    assert sol.objective == pytest.approx(float(obj), abs=1e-14)
    assert sol.kkt_residual <= 1e-12
    assert np.all(np.abs(sol.dual) <= LAM4 + 1e-15)


def test_t4_df_and_cp():
    pen = build_penalty(Y4)
    sol = solve_genlasso(Y4, pen, LAM4)
    assert degrees_of_freedom(sol, pen, "svd") == 2
    assert degrees_of_freedom(sol, pen, "groups") == 2
    y = [Fr(1, 5), Fr(1), Fr(6, 5), Fr(1, 10)]
    th = [Fr(0), Fr(113, 120), Fr(43, 40), Fr(0)]
    mean = sum(y) / 4
    s2 = sum((v - mean) ** 2 for v in y) / 3
    cp = sum((a - b) ** 2 for a, b in zip(y, th)) - 4 * s2 + 2 * s2 * 2
    assert cp_statistic(Y4, sol, pen, float(s2)) == pytest.approx(float(cp), abs=1e-14)


def test_t4_nullity_path_matches_dense_svd():
    pen = build_penalty(Y4)
    atol = active_tolerance(Y4)
    prev = Y4.size
    for lam in np.logspace(-6, 1, 40):
        sol = solve_genlasso(Y4, pen, lam)
        ref = dense_nullity(Y4, sol.theta, atol)
        assert degrees_of_freedom(sol, pen, "svd") == ref
        assert degrees_of_freedom(sol, pen, "groups") == ref
        assert ref <= prev
        prev = ref


def test_small_lambda_limit():
    pen = build_penalty(Y4)
    sol = solve_genlasso(Y4, pen, 1e-12)
    assert_allclose(sol.theta, Y4, atol=1e-10)
    assert degrees_of_freedom(sol, pen) == 4
    s2 = float(np.var(Y4, ddof=1))
    assert cp_statistic(Y4, sol, pen, s2) == pytest.approx(4 * s2, rel=1e-9)


def test_large_lambda_gives_zero():
    pen = build_penalty(Y4)
    sol = solve_genlasso(Y4, pen, 100.0)
    assert_array_equal(sol.theta, 0.0)
    assert degrees_of_freedom(sol, pen) == 0


@settings(max_examples=150, deadline=None)
@given(nonneg_series(), st.floats(1e-4, 5.0))
def test_kkt_and_hard_zeros(y, lam):
    pen = build_penalty(y)
    sol = solve_genlasso(y, pen, lam)
    assert sol.kkt_residual <= 1e-8
    assert_array_equal(sol.theta[y == 0], 0.0)
    assert np.all(sol.theta >= 0)
    assert lp_kkt_residual(y, sol.theta, lam, active_tolerance(y)) <= 1e-8
    assert degrees_of_freedom(sol, pen, "svd") == degrees_of_freedom(sol, pen, "groups")


@settings(max_examples=40, deadline=None)
@given(nonneg_series(max_len=8), st.floats(1e-3, 2.0))
def test_matches_dual_projected_gradient(y, lam):
    sol = solve_genlasso(y, build_penalty(y), lam)
    theta, gap = dual_pg(y, lam)
    assert gap <= 1e-10
    assert_allclose(sol.theta, theta, atol=1e-5)
    assert sol.objective == pytest.approx(primal_objective(y, theta, lam), abs=1e-6)


def test_certificate_rejects_wrong_theta():
    pen = build_penalty(Y4)
    res, _ = kkt_certificate(Y4, Y4, pen, LAM4)
    assert res > 1e-3
    y = np.array([0.0, 1.0, 2.0])
    res, dual = kkt_certificate(y, np.array([0.1, 1.0, 2.0]), build_penalty(y), 0.1)
    assert res == np.inf and dual is None


def test_solver_input_checks():
    pen = build_penalty(Y4)
    with pytest.raises(ValueError):
        solve_genlasso(Y4, pen, 0.0)
    with pytest.raises(DataValidityError):
        solve_genlasso(np.array([0.2, np.inf, 1.2, 0.1]), pen, 0.1)
    with pytest.raises(DataValidityError):
        solve_genlasso(Y4[:3], pen, 0.1)


def test_convergence_error_carries_iterate(monkeypatch):
    monkeypatch.setattr(dafl, "dp_solve", lambda y, g, w, pinned: np.asarray(y) * 0.5)
    with pytest.raises(ConvergenceError) as info:
        solve_genlasso(Y4, build_penalty(Y4), LAM4)
    assert_allclose(info.value.best, Y4 * 0.5)
    assert info.value.residual > 1e-8
    with pytest.raises(FitError) as info:
        fit_sparse_effects(Y4[:, None], Y4[:, None])
    assert len(info.value.failures) == 2
    assert_allclose(info.value.partial.alpha.final[:, 0], Y4)


def test_tuning_picks_grid_point_and_breaks_ties_low():
    tr = tune_lambda(Y4, grid_size=12)
    assert tr.chosen_lambda in tr.lambda_grid
    assert tr.cp_values[np.searchsorted(tr.lambda_grid, tr.chosen_lambda)] == tr.cp_values.min()
    assert tr.sigma2_hat == pytest.approx(np.var(Y4, ddof=1))
    # an all-zero series has a flat Cp curve
    flat = tune_lambda(np.zeros(5), grid_size=6)
    assert_array_equal(flat.cp_values, flat.cp_values[0])
    assert flat.chosen_lambda == flat.lambda_grid[0]


def test_tuning_config_validation():
    with pytest.raises(ValueError):
        TuningConfig(grid_size=1)
    with pytest.raises(ValueError):
        TuningConfig(lambda_min=1.0, lambda_max=0.5)
    with pytest.raises(ValueError):
        TuningConfig(mode="global")


def test_blocks_and_final():
    b = extract_blocks(np.array([0.0, 0.5, -0.001, 0.3]))
    assert_array_equal(b.sparse, [0, 2])
    assert_array_equal(b.dense, [1, 3])
    assert_array_equal(final_effects(np.array([0.4, 0.6, 0.1, 0.9]), b), [0.0, 0.6, 0.0, 0.9])


def test_fit_composes_per_series_steps():
    fit = fit_sparse_effects(Y4[:, None], Y4[::-1, None].copy())
    tr = tune_lambda(Y4)
    sol = solve_genlasso(Y4, build_penalty(Y4), tr.chosen_lambda)
    blocks = extract_blocks(sol.theta)
    assert fit.alpha.chosen_lambdas[0] == tr.chosen_lambda
    assert_array_equal(fit.alpha.theta[:, 0], sol.theta)
    assert_array_equal(fit.alpha.blocks[0].sparse, blocks.sparse)
    assert_array_equal(fit.alpha.final[:, 0], final_effects(Y4, blocks))


def test_aggregated_mode_shares_lambda():
    rng = np.random.default_rng(4)
    y = np.abs(rng.normal(1.0, 0.6, size=(30, 5)))
    y[rng.random(y.shape) < 0.3] = 0.0
    fit = fit_sparse_effects(y, y[:, :3], TuningConfig(mode="aggregated", grid_size=10))
    lams = fit.alpha.chosen_lambdas
    assert_array_equal(lams, lams[0])
    assert not fit.failures


def test_constant_series_picks_smallest_lambda():
    tr = tune_lambda(np.full(10, 1.3))
    assert tr.sigma2_hat == 0.0
    assert tr.chosen_lambda == tr.lambda_grid[0]


def test_hard_zero_half_dominates():
    y = np.concatenate([np.zeros(10), np.full(10, 50.0) + np.linspace(0, 1, 10)])
    tr = tune_lambda(y, grid_bounds=(1e-4, 10.0))
    sol = solve_genlasso(y, build_penalty(y), tr.chosen_lambda)
    assert_array_equal(sol.theta[:10], 0.0)
    assert np.all(sol.theta[10:] > 0)


def test_tuning_reproducible_on_simulated_series():
    from sparse_mefm.simulate import gen_sparse_effect_series

    def run():
        rng = np.random.default_rng(77)
        y = gen_sparse_effect_series(50, 0.4, 0.8, 2.0, 1.0, 0.3, rng) + np.abs(0.2 * rng.standard_normal(50))
        y[y < 0.25] = 0.0
        return tune_lambda(y, 30, (1e-4, 10.0))

    a, b = run(), run()
    assert a.chosen_lambda == b.chosen_lambda
    assert a.cp_values.tobytes() == b.cp_values.tobytes()


@settings(max_examples=40, deadline=None)
@given(nonneg_series())
def test_path_monotonicity(y):
    pen = build_penalty(y)
    objs, pens = [], []
    for lam in np.logspace(-3, 1, 15):
        sol = solve_genlasso(y, pen, lam)
        objs.append(sol.objective)
        pens.append(np.abs(pen.apply(sol.theta)[~pen.hard_rows()]).sum())
    assert np.all(np.diff(objs) >= -1e-10)
    assert np.all(np.diff(pens) <= 1e-8 * (1 + max(pens)))
