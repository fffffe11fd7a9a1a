import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from strifle.glm import neg_quasi_loss
from strifle.penalty import PenaltySpec, penalty_total
from strifle.solver import (
    CVConfig,
    FitConfig,
    cv_select_lambda,
    fit_cv,
    fit_path,
    fit_penalized,
    gradient_mapping_norm,
    kfold_indices,
    lambda_grid,
    lambda_max,
    project_l1,
)

pytestmark = pytest.mark.property

TIGHT = FitConfig(tol=1e-14, grad_tol=1e-11, max_iter=200000)


def _logit_data(seed, n=120, d=6, scale=0.8):
    rng = np.random.default_rng(seed)
    X = np.hstack([np.ones((n, 1)), rng.normal(size=(n, d - 1))])
    beta = np.zeros(d)
    beta[:4] = [0.3, 1.0, -0.8, 0.5]
    y = (rng.random(n) < 1 / (1 + np.exp(-scale * X @ beta))).astype(float)
    return X, y


def test_ols_oracle_square_design():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(5, 5)) + 3 * np.eye(5)
    y = rng.normal(size=5)
    res = fit_penalized(X, y, None, "identity", PenaltySpec("lasso", 0.0), TIGHT)
    np.testing.assert_allclose(res.coef, np.linalg.solve(X, y), atol=1e-6)
    assert res.converged


def test_ols_oracle_default_config():
    rng = np.random.default_rng(1)
    X = np.hstack([np.ones((60, 1)), rng.normal(size=(60, 3))])
    y = X @ [1.0, 2.0, -1.0, 0.5] + rng.normal(size=60)
    res = fit_penalized(X, y, None, "identity", PenaltySpec("lasso", 0.0))
    np.testing.assert_allclose(res.coef, np.linalg.lstsq(X, y, rcond=None)[0], atol=1e-6)


def test_weighted_least_squares_oracle():
    rng = np.random.default_rng(2)
    X = np.hstack([np.ones((6, 1)), rng.normal(size=(6, 2))])
    y = rng.normal(size=6)
    w = rng.uniform(0.2, 3.0, size=6)
    res = fit_penalized(X, y, w, "identity", PenaltySpec("lasso", 0.0), TIGHT)
    W = np.diag(w)
    np.testing.assert_allclose(res.coef, np.linalg.solve(X.T @ W @ X, X.T @ W @ y), atol=1e-6)


@pytest.mark.parametrize("ybar", [0.1, 0.35, 0.5, 0.8])
def test_logistic_intercept_closed_form(ybar):
    n = 200
    y = np.zeros(n)
    y[: int(round(ybar * n))] = 1.0
    res = fit_penalized(np.ones((n, 1)), y, None, "logit", PenaltySpec("lasso", 0.0), TIGHT)
    assert res.coef[0] == pytest.approx(np.log(ybar / (1 - ybar)), abs=1e-8)


def test_huge_lambda_leaves_only_intercept():
    X, y = _logit_data(3)
    res = fit_penalized(X, y, None, "logit", PenaltySpec("lasso", 1e6), TIGHT)
    assert np.all(res.coef[1:] == 0.0)
    assert res.coef[0] == pytest.approx(np.log(y.mean() / (1 - y.mean())), abs=1e-8)


def test_lambda_max_is_the_zero_threshold():
    X, y = _logit_data(4)
    lmax = lambda_max(X, y)
    at = fit_penalized(X, y, None, "logit", PenaltySpec("lasso", lmax * 1.0001), TIGHT)
    below = fit_penalized(X, y, None, "logit", PenaltySpec("lasso", lmax * 0.95), TIGHT)
    assert np.all(at.coef[1:] == 0)
    assert np.any(below.coef[1:] != 0)


@pytest.mark.parametrize("family", ["lasso", "scad", "mcp"])
@pytest.mark.parametrize("seed", range(3))
def test_objective_trace_monotone(family, seed):
    X, y = _logit_data(seed, n=80, d=12)
    res = fit_penalized(X, y, None, "logit", PenaltySpec(family, 0.02))
    assert np.all(np.diff(res.trace) <= 1e-12)
    assert np.isfinite(res.objective)
    manual = neg_quasi_loss(X, y, res.coef) + penalty_total(res.coef, PenaltySpec(family, 0.02, mask=(False,) + (True,) * 11))
    assert res.objective == pytest.approx(manual, rel=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_first_order_stationarity(seed):
    tol = 1e-8
    X, y = _logit_data(seed, n=100, d=10)
    cfg = FitConfig(tol=tol, grad_tol=tol)
    for lam in (0.005, 0.03):
        pen = PenaltySpec("lasso", lam)
        res = fit_penalized(X, y, None, "logit", pen, cfg)
        r = gradient_mapping_norm(X, y, None, "logit", pen.with_mask((False,) + (True,) * 9), res.coef)
        assert r < 10 * tol * (1 + np.linalg.norm(res.coef))


def test_warm_path_not_worse_than_cold():
    X, y = _logit_data(5, n=150, d=15)
    grid = lambda_grid(lambda_max(X, y), 15, 0.01)
    path = fit_path(X, y, None, "logit", PenaltySpec("lasso"), grid)
    for lam, res in zip(grid, path):
        cold = fit_penalized(X, y, None, "logit", PenaltySpec("lasso", lam))
        assert res.objective <= cold.objective + 1e-8


@pytest.mark.parametrize("family", ["lasso", "scad", "mcp"])
def test_screened_path_equals_full_path(family):
    X, y = _logit_data(6, n=150, d=25)
    grid = lambda_grid(lambda_max(X, y), 12, 0.05)
    a = fit_path(X, y, None, "logit", PenaltySpec(family), grid, TIGHT, screen=True)
    b = fit_path(X, y, None, "logit", PenaltySpec(family), grid, TIGHT, screen=False)
    for ra, rb in zip(a, b):
        np.testing.assert_allclose(ra.coef, rb.coef, atol=1e-7)


@given(c=st.floats(0.05, 20.0), lam=st.floats(0.001, 0.1))
def test_weight_scaling_equivariance(c, lam):
    X, y = _logit_data(7, n=60, d=5)
    a = fit_penalized(X, y, None, "logit", PenaltySpec("lasso", lam), TIGHT)
    b = fit_penalized(X, y, np.full(60, c), "logit", PenaltySpec("lasso", lam * c), TIGHT)
    np.testing.assert_allclose(a.coef, b.coef, atol=1e-6)


def test_l1_radius_is_enforced():
    X, y = _logit_data(8, scale=3.0)
    res = fit_penalized(X, y, None, "logit", PenaltySpec("lasso", 0.0), FitConfig(l1_radius=0.5))
    assert np.sum(np.abs(res.coef[1:])) <= 0.5 + 1e-12


def test_project_l1():
    v = np.array([9.0, 3.0, -1.0, 0.5])
    mask = np.array([False, True, True, True])
    out = project_l1(v, 2.0, mask)
    assert out[0] == 9.0
    assert np.sum(np.abs(out[1:])) == pytest.approx(2.0)
    np.testing.assert_allclose(out[1:], [2.0, 0.0, 0.0])


def test_offset_shifts_linear_predictor():
    X, y = _logit_data(9)
    off = np.full(X.shape[0], 0.7)
    a = fit_penalized(X, y, None, "logit", PenaltySpec("lasso", 0.0), TIGHT, offset=off)
    b = fit_penalized(X, y, None, "logit", PenaltySpec("lasso", 0.0), TIGHT)
    assert a.coef[0] == pytest.approx(b.coef[0] - 0.7, abs=1e-7)
    np.testing.assert_allclose(a.coef[1:], b.coef[1:], atol=1e-7)


def test_validation_errors():
    X, y = _logit_data(10)
    with pytest.raises(ValueError):
        fit_penalized(X, y[:-1])
    with pytest.raises(ValueError):
        fit_penalized(X, y, -np.ones(X.shape[0]))
    with pytest.raises(ValueError):
        fit_penalized(X, y, warm=np.zeros(2))
    with pytest.raises(ValueError):
        FitConfig(backtrack=1.0)
    with pytest.raises(ValueError):
        FitConfig(tol=0)


# cross-validation ---------------------------------------------------------


def test_cv_single_lambda():
    X, y = _logit_data(11)
    lam, curve = cv_select_lambda(X, y, None, "logit", PenaltySpec("lasso"), [0.05])
    assert lam == 0.05


def test_cv_deterministic_and_not_worse_than_smallest():
    X, y = _logit_data(12)
    grid = lambda_grid(lambda_max(X, y), 10)
    a = cv_select_lambda(X, y, None, "logit", PenaltySpec("lasso"), grid, 5, seed=3)
    b = cv_select_lambda(X, y, None, "logit", PenaltySpec("lasso"), grid, 5, seed=3)
    assert a[0] == b[0]
    np.testing.assert_array_equal(a[1], b[1])
    j = int(np.flatnonzero(grid == a[0])[0])
    assert a[1][j] <= a[1][-1]


def test_cv_pure_noise_prefers_sparse():
    rng = np.random.default_rng(13)
    X = np.hstack([np.ones((150, 1)), rng.normal(size=(150, 20))])
    y = (rng.random(150) < 0.5).astype(float)
    grid = lambda_grid(lambda_max(X, y), 10)
    lam, curve = cv_select_lambda(X, y, None, "logit", PenaltySpec("lasso"), grid, 5, seed=0)
    assert curve[np.flatnonzero(grid == lam)[0]] <= curve[-1]


def test_cv_ties_go_to_smallest_lambda():
    # an all-zero response column makes every lambda give the same held-out loss
    X = np.hstack([np.ones((20, 1)), np.zeros((20, 2))])
    y = np.r_[np.ones(10), np.zeros(10)]
    lam, curve = cv_select_lambda(X, y, None, "logit", PenaltySpec("lasso"), [0.3, 0.2, 0.1], 4, seed=0)
    assert lam == 0.1


def test_cv_zero_weight_fold_rejected():
    X, y = _logit_data(14, n=10)
    w = np.zeros(10)
    with pytest.raises(ValueError, match="zero total weight"):
        cv_select_lambda(X, y, w, "logit", PenaltySpec("lasso"), [0.2, 0.1], 5, seed=0)


def test_cv_grid_validation():
    X, y = _logit_data(15)
    with pytest.raises(ValueError):
        cv_select_lambda(X, y, None, "logit", PenaltySpec("lasso"), [0.1, 0.2])
    with pytest.raises(ValueError):
        cv_select_lambda(X, y, None, "logit", PenaltySpec("lasso"), [])


def test_kfold_partition():
    parts = kfold_indices(23, 5, 0)
    assert sorted(np.concatenate(parts).tolist()) == list(range(23))
    assert {len(p) for p in parts} <= {4, 5}


def test_fit_cv_fixed_lambda_and_grid():
    X, y = _logit_data(16)
    tf = fit_cv(X, y, cv=CVConfig(lam=0.05))
    assert tf.lam == 0.05
    tf2 = fit_cv(X, y, cv=CVConfig(n_lambda=8, seed=1))
    assert tf2.grid.size == 8 and tf2.lam in tf2.grid
    assert tf2.grid[-1] == pytest.approx(0.01 * tf2.grid[0])
