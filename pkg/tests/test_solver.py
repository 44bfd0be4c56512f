import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import fista_group_lasso

from safeglasso import (ConfigurationError, GroupProblem, group_lasso_exact, group_lasso_gmd,
                        kkt_check, lambda_max, smooth_ridge_fit, solution_path)
from safeglasso.solver import objective


def random_problem(rng, N=None, K=None, G=None):
    N = N or int(rng.integers(20, 120))
    K = K or int(rng.integers(1, 6))
    G = G or int(rng.integers(1, 8))
    W = rng.normal(size=(N, K * G))
    y = W[:, :G] @ rng.normal(size=G) + rng.normal(size=N)
    return GroupProblem(W, y, G)


def test_gmd_matches_fista(rng):
    for _ in range(5):
        prob = random_problem(rng)
        lam = 0.3 * lambda_max(prob)
        fit = group_lasso_gmd(prob, lam, tol=1e-11, max_iter=100_000)
        _, f_ref = fista_group_lasso(prob.W, prob.y, prob.group_size, lam)
        assert fit.converged
        assert abs(fit.objective - f_ref) <= 1e-6 * abs(f_ref)
        assert kkt_check(prob, lam, fit)["max_violation"] <= 1e-6


def test_exact_and_gmd_agree(rng):
    prob = random_problem(rng, N=80, K=5, G=6)
    lam = 0.2 * lambda_max(prob)
    a = group_lasso_gmd(prob, lam, tol=1e-12, max_iter=100_000)
    b = group_lasso_exact(prob, lam, tol=1e-12, max_iter=100_000)
    assert abs(a.objective - b.objective) <= 1e-9 * a.objective
    assert np.array_equal(a.active, b.active)


def test_lambda_zero_is_least_squares(rng):
    prob = random_problem(rng, N=60, K=3, G=4)
    fit = group_lasso_gmd(prob, 0.0, tol=1e-13, max_iter=200_000)
    ols = np.linalg.lstsq(prob.W, prob.y, rcond=None)[0]
    assert np.max(np.abs(fit.beta - ols)) <= 1e-6 * (1 + np.abs(ols).max())


def test_orthonormal_design_closed_form(rng):
    N, K, G = 40, 4, 3
    Q, _ = np.linalg.qr(rng.normal(size=(N, K * G)))
    y = rng.normal(size=N)
    prob = GroupProblem(Q, y, G)
    lam = 0.8
    fit = group_lasso_gmd(prob, lam, tol=1e-13)
    for k in range(K):
        u = 2.0 * Q[:, k * G:(k + 1) * G].T @ y
        nu = np.linalg.norm(u)
        ref = np.zeros(G) if nu <= lam else (1 - lam / nu) * u / 2.0
        assert np.max(np.abs(fit.beta[k * G:(k + 1) * G] - ref)) <= 1e-10


@given(st.integers(0, 2**32 - 1))
def test_zero_at_lambda_max(seed):
    rng = np.random.default_rng(seed)
    prob = random_problem(rng)
    lmax = lambda_max(prob)
    for lam in (lmax, 1.5 * lmax):
        assert np.all(group_lasso_gmd(prob, lam).beta == 0.0)
        assert np.all(group_lasso_exact(prob, lam).beta == 0.0)
    # just below lambda_max the leading group enters
    assert group_lasso_gmd(prob, 0.99 * lmax, tol=1e-10).active.any()


def test_lambda_max_formula(rng):
    prob = random_problem(rng, N=30, K=3, G=2)
    ref = max(2 * np.linalg.norm(prob.W[:, 2 * k:2 * k + 2].T @ prob.y) for k in range(3))
    assert lambda_max(prob) == pytest.approx(ref, rel=1e-14)


def test_path_is_warm_started_and_ends_full(rng):
    prob = random_problem(rng, N=100, K=4, G=3)
    grid = lambda_max(prob) * np.logspace(0, -4, 30)
    for method in ("gmd", "exact"):
        fits = solution_path(prob, grid, tol=1e-10, method=method)
        assert len(fits) == 30
        assert not fits[0].active.any()
        assert fits[-1].active.all()
        assert all(kkt_check(prob, lam, f)["ok"] for lam, f in zip(grid, fits))


def test_path_requires_decreasing_grid(rng):
    prob = random_problem(rng)
    with pytest.raises(ConfigurationError):
        solution_path(prob, [1.0, 2.0])
    with pytest.raises(ConfigurationError):
        solution_path(prob, [2.0, 1.0], method="newton")


def test_objective_nonincreasing_per_sweep(rng):
    prob = random_problem(rng, N=70, K=5, G=4)
    fit = group_lasso_gmd(prob, 0.1 * lambda_max(prob), tol=1e-12, record_objective=True)
    h = np.array(fit.history)
    assert np.all(np.diff(h) <= 1e-10 * h[0])


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10.0))
def test_scaling_covariance(seed, c):
    # scaling y by c and lambda by c scales the solution by c
    rng = np.random.default_rng(seed)
    prob = random_problem(rng, N=50, K=3, G=3)
    lam = 0.3 * lambda_max(prob)
    a = group_lasso_gmd(prob, lam, tol=1e-13, max_iter=100_000)
    b = group_lasso_gmd(GroupProblem(prob.W, c * prob.y, 3), c * lam, tol=1e-13,
                        max_iter=100_000)
    assert np.max(np.abs(b.beta - c * a.beta)) <= 1e-6 * c * (1 + np.abs(a.beta).max())


def test_kkt_flags_wrong_solution(rng):
    prob = random_problem(rng, N=50, K=3, G=2)
    lam = 0.3 * lambda_max(prob)
    fit = group_lasso_gmd(prob, lam, tol=1e-12)
    bad = fit.beta + 0.1
    assert kkt_check(prob, lam, fit)["ok"]
    assert not kkt_check(prob, lam, bad)["ok"]


def test_zero_columns_and_single_group(rng):
    W = np.zeros((10, 6))
    W[:, 3:] = rng.normal(size=(10, 3))
    prob = GroupProblem(W, rng.normal(size=10), 3)
    fit = group_lasso_gmd(prob, 0.01, tol=1e-12)
    assert np.all(fit.beta[:3] == 0.0) and fit.converged
    one = GroupProblem(W[:, 3:], prob.y, 3)
    assert group_lasso_exact(one, 0.01, tol=1e-12).objective == pytest.approx(
        group_lasso_gmd(one, 0.01, tol=1e-12).objective, rel=1e-9)


def test_invalid_inputs(rng):
    with pytest.raises(ConfigurationError):
        GroupProblem(np.ones((4, 5)), np.ones(4), 2)
    prob = random_problem(rng)
    with pytest.raises(ConfigurationError):
        group_lasso_gmd(prob, -1.0)
    with pytest.raises(ConfigurationError):
        group_lasso_gmd(prob, 1.0, tol=0.0)


def test_objective_helper(rng):
    prob = random_problem(rng, N=20, K=2, G=2)
    b = rng.normal(size=4)
    r = prob.y - prob.W @ b
    ref = r @ r + 0.7 * (np.linalg.norm(b[:2]) + np.linalg.norm(b[2:]))
    assert objective(prob, 0.7, b) == pytest.approx(ref, rel=1e-14)


class TestRidge:
    def test_zero_penalty_is_ols(self, rng):
        X = rng.normal(size=(50, 6))
        y = rng.normal(size=50)
        Om = np.eye(6)
        beta, cov, s2 = smooth_ridge_fit(X, Om, Om, 0.0, 0.0, y)
        ols = np.linalg.lstsq(X, y, rcond=None)[0]
        assert np.allclose(beta, ols, atol=1e-10)
        r = y - X @ ols
        assert s2 == pytest.approx(r @ r / 44, rel=1e-10)
        assert np.allclose(cov, np.linalg.inv(X.T @ X), atol=1e-10)

    def test_penalized_solution_and_shrinkage(self, rng):
        X = rng.normal(size=(30, 4))
        y = rng.normal(size=30)
        A = rng.normal(size=(4, 4))
        Os = A @ A.T
        Oz = np.diag([0.0, 1.0, 2.0, 3.0])
        beta, _, _ = smooth_ridge_fit(X, Os, Oz, 2.0, 0.5, y)
        ref = np.linalg.solve(X.T @ X + 2.0 * Os + 0.5 * Oz, X.T @ y)
        assert np.allclose(beta, ref, atol=1e-10)
        big, _, _ = smooth_ridge_fit(X, np.eye(4), np.eye(4), 1e8, 0.0, y)
        assert np.abs(big).max() <= 1e-5

    def test_negative_phi(self, rng):
        X = rng.normal(size=(10, 2))
        with pytest.raises(ConfigurationError):
            smooth_ridge_fit(X, np.eye(2), np.eye(2), -1.0, 0.0, np.zeros(10))
