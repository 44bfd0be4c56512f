"""Two-stage adaptive sparse-smooth selection of functional predictors.

Pipeline
--------
1. Smooth-penalized fit of all predictors (no sparsity) gives initial
   surfaces; their norms define adaptive weights ``f_k, g_k, h_k``.
2. Stage one: for every ``(phi1, phi2)`` the per-group quadratic form
   ``Q_k = f_k I + g_k phi1 (Omega_ss x I_M) + h_k phi2 (I_L x Omega_zz)`` is
   Cholesky-factored, the design is reparametrized so that the penalty
   becomes a plain group lasso, and a warm-started ``lambda`` path is solved
   on each training fold.  Blocked cross-validation picks ``(lambda, phi)``.
3. Stage two repeats step 2 on the stage-one survivors with weights
   recomputed from the stage-one estimates.
4. The survivors of stage two are refitted with the smoothness penalty only.

Coefficient vectors of a group are the row-major flattening of the ``L x M``
coefficient matrix ``B_k``.  The design is built from the raw predictors and
column-centered (together with the response) inside every training set, which
is exactly an explicit intercept.
"""

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky, solve_triangular

from ._kernels import exact_block_path
from .basis import evaluate_basis
from .cv import block_cv_partition, fold_indices
from .design import CenteringStats, GroupedDesign, assemble_design
from .errors import ConfigurationError, NumericalError
from .solver import GroupProblem, group_lasso_gmd

logger = logging.getLogger(__name__)

__all__ = [
    "PenaltyConfig",
    "GroupPenalty",
    "SafeOptions",
    "SelectionResult",
    "TuningChoice",
    "block_cv_partition",
    "build_group_penalty",
    "reparametrize",
    "surface_norms",
    "adaptive_weights",
    "initial_fit",
    "cv_tune",
    "safe_select",
    "post_fit",
    "evaluate_surface",
    "default_lambda_ratios",
    "SafeAlgorithm",
]


# ---------------------------------------------------------------------------
# penalty algebra


@dataclass(frozen=True, eq=False)
class PenaltyConfig:
    """Sparsity level, smoothing levels and per-group adaptive weights."""

    lam: float
    phi1: float
    phi2: float
    f: np.ndarray
    g: np.ndarray
    h: np.ndarray
    d_exponent: float = 1.0

    def validate(self):
        for name in ("lam", "phi1", "phi2"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ConfigurationError(f"{name} must be finite and nonnegative, got {v}")
        for name in ("f", "g", "h"):
            w = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(w)) or np.any(w <= 0):
                raise ConfigurationError(f"weights {name} must be finite and positive")
        if not self.d_exponent > 0:
            raise ConfigurationError("d_exponent must be positive")


@dataclass(frozen=True, eq=False)
class GroupPenalty:
    """Per-group penalty matrices ``Q_k = R_k R_k^T`` (``R_k`` lower triangular)."""

    Q: np.ndarray
    R_chol: np.ndarray
    R_inv: np.ndarray

    def penalty(self, beta):
        """``sum_k sqrt(beta_k^T Q_k beta_k)``."""
        b = np.asarray(beta, dtype=float).reshape(self.Q.shape[0], -1)
        return float(np.sum(np.sqrt(np.einsum("kg,kgh,kh->k", b, self.Q, b))))


def _penalty_parts(dd_gram_s, dd_gram_z):
    L, M = dd_gram_s.shape[0], dd_gram_z.shape[0]
    return np.kron(dd_gram_s, np.eye(M)), np.kron(np.eye(L), dd_gram_z)


def build_group_penalty(cfg, dd_gram_s, dd_gram_z, L=None, M=None):
    """Factor ``Q_k = f_k I + g_k phi1 (Omega_ss x I_M) + h_k phi2 (I_L x Omega_zz)``."""
    cfg.validate()
    dd_gram_s = np.asarray(dd_gram_s, dtype=float)
    dd_gram_z = np.asarray(dd_gram_z, dtype=float)
    if L is not None and dd_gram_s.shape != (L, L):
        raise ConfigurationError("dd_gram_s does not match L")
    if M is not None and dd_gram_z.shape != (M, M):
        raise ConfigurationError("dd_gram_z does not match M")
    Ps, Pz = _penalty_parts(dd_gram_s, dd_gram_z)
    f, g, h = (np.asarray(w, dtype=float) for w in (cfg.f, cfg.g, cfg.h))
    return _factor_penalties(f, g * cfg.phi1, h * cfg.phi2, Ps, Pz)


def _factor_penalties(f, gs, hz, Ps, Pz):
    G = Ps.shape[0]
    eye = np.eye(G)
    Q = f[:, None, None] * eye + gs[:, None, None] * Ps + hz[:, None, None] * Pz
    R = np.empty_like(Q)
    Rinv = np.empty_like(Q)
    for k in range(Q.shape[0]):
        Q[k] = 0.5 * (Q[k] + Q[k].T)
        try:
            R[k] = cholesky(Q[k], lower=True)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"penalty matrix of group {k} is not positive definite") from exc
        Rinv[k] = solve_triangular(R[k], eye, lower=True)
    return GroupPenalty(Q, R, Rinv)


def reparametrize(design, penalty):
    """Transform each group block ``X_k -> X_k R_k^{-T}``.

    With ``beta_tilde_k = R_k^T beta_k`` predictions are unchanged and the
    penalty ``sqrt(beta_k^T Q_k beta_k)`` becomes ``||beta_tilde_k||``.
    """
    W = design.W
    N = W.shape[0]
    K, G = design.n_groups, design.group_size
    if penalty.Q.shape[0] != K or penalty.Q.shape[1] != G:
        raise ConfigurationError("penalty and design disagree on group structure")
    blocks = W.reshape(N, K, G)
    out = np.einsum("nkg,khg->nkh", blocks, penalty.R_inv).reshape(N, K * G)
    return replace(design, W=out)


def surface_norms(B, dd_gram_s, dd_gram_z):
    """``(||gamma||, ||d2 gamma / ds2||, ||d2 gamma / dz2||)`` from a coefficient matrix."""
    B = np.asarray(B, dtype=float)
    n0 = np.sum(B * B)
    ns = np.sum(B * (dd_gram_s @ B))
    nz = np.sum(B * (B @ dd_gram_z))
    return tuple(float(np.sqrt(max(v, 0.0))) for v in (n0, ns, nz))


def adaptive_weights(initial_B, dd_gram_s, dd_gram_z, d_exponent=1.0, cap=1e8,
                     semi_adaptive=False):
    """Adaptive weights ``1 / norm^d`` from initial coefficient matrices, capped at ``cap``.

    With ``semi_adaptive`` only the sparsity weights ``f`` adapt and the
    smoothness weights are one.
    """
    if not d_exponent > 0:
        raise ConfigurationError("d_exponent must be positive")
    norms = np.array([surface_norms(B, dd_gram_s, dd_gram_z) for B in initial_B]).reshape(-1, 3)

    def inv(v):
        with np.errstate(divide="ignore", over="ignore"):
            w = 1.0 / np.power(v, d_exponent)
        return np.where(np.isfinite(w) & (w < cap), w, cap)

    f = inv(norms[:, 0])
    if semi_adaptive:
        ones = np.ones_like(f)
        return f, ones, ones.copy()
    return f, inv(norms[:, 1]), inv(norms[:, 2])


def evaluate_surface(B, basis_s, basis_z, s_points, z_points):
    """``gamma(s, z) = omega(s)^T B tau(z)`` on the grid ``s_points x z_points``."""
    return evaluate_basis(basis_s, s_points) @ np.asarray(B, dtype=float) @ \
        evaluate_basis(basis_z, z_points).T


# ---------------------------------------------------------------------------
# options and results


def default_lambda_ratios(n_lambda=100, n_obs=None, n_coef=None, min_ratio=None):
    """Log-spaced fractions of ``lambda_max`` from 1 down to ``min_ratio``.

    Without an explicit ``min_ratio`` the floor is 0.05 when there are fewer
    observations than coefficients and 1e-3 otherwise.
    """
    if min_ratio is None:
        min_ratio = 0.05 if (n_obs is not None and n_coef is not None and n_obs < n_coef) else 1e-3
    if not 0 < min_ratio < 1:
        raise ConfigurationError("min_ratio must lie in (0, 1)")
    return np.logspace(0.0, np.log10(min_ratio), int(n_lambda))


@dataclass(frozen=True)
class SafeOptions:
    """Tuning grids and switches of the selection pipeline.

    ``phi_exponents`` are base-10 exponents of the smoothing grid relative to a
    unit-balance scale (see :func:`_phi_scale`); the same exponents are used in
    both directions.
    """

    n_lambda: int = 100
    lambda_min_ratio: float = None
    phi_exponents: tuple = (-4.0, -2.0, 0.0, 2.0, 4.0)
    folds: int = 5
    d_exponent: float = 1.0
    weight_cap: float = 1e8
    semi_adaptive: bool = False
    one_se: bool = False
    tol: float = 1e-8
    max_iter: int = 10_000
    solver: str = "exact"

    def validate(self):
        if self.n_lambda < 1:
            raise ConfigurationError("n_lambda must be positive")
        if len(self.phi_exponents) < 1:
            raise ConfigurationError("phi grid is empty")
        if self.folds < 2:
            raise ConfigurationError("need at least two folds")
        if not self.d_exponent > 0:
            raise ConfigurationError("d_exponent must be positive")
        if self.solver not in ("exact", "gmd"):
            raise ConfigurationError(f"unknown solver {self.solver!r}")


@dataclass(frozen=True)
class TuningChoice:
    lam: float
    phi1: float
    phi2: float
    cv_error: float


@dataclass(eq=False)
class SelectionResult:
    """Outcome of :func:`safe_select`.

    Group indices are zero based.  ``final_B`` maps each stage-two group to its
    ``L x M`` coefficient matrix; ``intercept`` and ``final_B`` give
    predictions in the original response units.
    """

    stage1_set: tuple
    stage2_set: tuple
    stage1_tuning: TuningChoice
    stage2_tuning: TuningChoice
    final_B: dict
    cv_table: dict
    centering: CenteringStats
    intercept: float
    fitted: np.ndarray
    L: int
    M: int
    initial_tuning: TuningChoice = None
    post_tuning: TuningChoice = None
    weights: dict = field(default_factory=dict)
    stage1_B: dict = field(default_factory=dict)
    basis_s: object = field(default=None, repr=False)
    basis_z: object = field(default=None, repr=False)
    names: tuple = ()
    runtime: float = 0.0

    @property
    def residuals(self):
        return self._y - self.fitted

    def predict(self, ds, clamp_z=True):
        """Predicted responses for a dataset sharing the predictor layout."""
        if not self.final_B:
            return np.full(ds.n, self.intercept)
        groups = sorted(self.final_B)
        design = assemble_design(ds.select_groups(groups), self.basis_s, self.basis_z,
                                 clamp_z=clamp_z)
        beta = np.concatenate([self.final_B[k].ravel() for k in groups])
        return self.intercept + design.W @ beta

    def surface(self, k, s_points, z_points):
        B = self.final_B.get(k)
        if B is None:
            return np.zeros((len(s_points), len(z_points)))
        return evaluate_surface(B, self.basis_s, self.basis_z, s_points, z_points)


# ---------------------------------------------------------------------------
# fold workspace


class _Split:
    """Centered training data and raw test data of one split."""

    def __init__(self, X, y, train, test):
        self.train, self.test = train, test
        Xt = X[train]
        self.x_mean = Xt.mean(axis=0)
        self.y_mean = float(y[train].mean())
        self.Xc = Xt - self.x_mean
        self.yc = y[train] - self.y_mean
        self.X_test = X[test] - self.x_mean if test.size else X[test]
        self.y_test = y[test]


class _Workspace:
    """Full-data and per-fold views of one grouped design."""

    def __init__(self, X, y, group_size, folds):
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.G = int(group_size)
        self.K = self.X.shape[1] // self.G
        n = self.y.size
        every = np.arange(n)
        self.full = _Split(self.X, self.y, every, np.array([], dtype=int))
        labels = block_cv_partition(n, folds)
        self.splits = [_Split(self.X, self.y, tr, te) for tr, te in fold_indices(labels)]
        self._grams = {}

    def block_grams(self, split):
        key = id(split)
        if key not in self._grams:
            blocks = split.Xc.reshape(-1, self.K, self.G).transpose(1, 0, 2)
            self._grams[key] = np.matmul(blocks.transpose(0, 2, 1), blocks)
        return self._grams[key]


def _phi_scale(numer_trace, penalty_trace):
    return numer_trace / penalty_trace if penalty_trace > 0 else 0.0


def _phi_pairs(exponents, scale_s, scale_z):
    ex = np.asarray(exponents, dtype=float)
    s_vals = np.unique(10.0**ex * scale_s) if scale_s > 0 else np.array([0.0])
    z_vals = np.unique(10.0**ex * scale_z) if scale_z > 0 else np.array([0.0])
    return [(float(a), float(b)) for a in s_vals for b in z_vals]


def _pick(rows, folds, one_se):
    """Index of the selected row of a CV table.

    Rows are ``(lam_ratio, lam, phi1, phi2, mean, sd)``; ties and the one-SE
    rule favour sparser (larger ``lam_ratio``) then smoother models.
    """
    means = np.array([r[4] for r in rows])
    finite = np.isfinite(means)
    if not finite.any():
        raise NumericalError("no finite cross-validation error")
    best = np.nanmin(np.where(finite, means, np.inf))
    if one_se:
        i_best = min((i for i in range(len(rows)) if means[i] == best),
                     key=lambda i: (-rows[i][0], -rows[i][2], -rows[i][3]))
        se = rows[i_best][5] / np.sqrt(folds)
        limit = best + (se if np.isfinite(se) else 0.0)
    else:
        limit = best
    cands = [i for i in range(len(rows)) if finite[i] and means[i] <= limit]
    return max(cands, key=lambda i: (rows[i][0], rows[i][2], rows[i][3], -means[i]))


# ---------------------------------------------------------------------------
# smooth-penalized (ridge) fits


def _block_diag_penalties(n_groups, dd_gram_s, dd_gram_z):
    Ps, Pz = _penalty_parts(dd_gram_s, dd_gram_z)
    eye = np.eye(n_groups)
    return np.kron(eye, Ps), np.kron(eye, Pz)


def _ridge_solve(XtX, Xty, Os, Oz, phi1, phi2):
    A = XtX + phi1 * Os + phi2 * Oz
    try:
        return cho_solve(cho_factor(A, lower=True), Xty)
    except np.linalg.LinAlgError:
        jitter = 1e-10 * np.trace(A) / A.shape[0]
        try:
            return cho_solve(cho_factor(A + jitter * np.eye(A.shape[0]), lower=True), Xty)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("penalized normal matrix is singular") from exc


def _ridge_cv(ws, dd_gram_s, dd_gram_z, phi_grid, one_se=False):
    """Blocked-CV smooth-penalized fit; returns (beta, choice, table)."""
    Os, Oz = _block_diag_penalties(ws.K, dd_gram_s, dd_gram_z)
    if phi_grid is None:
        raise ConfigurationError("phi_grid is required")
    phi_grid = [tuple(map(float, p)) for p in phi_grid]
    if not phi_grid:
        raise ConfigurationError("phi grid is empty")
    errs = np.zeros((len(phi_grid), len(ws.splits)))
    for j, sp in enumerate(ws.splits):
        XtX, Xty = sp.Xc.T @ sp.Xc, sp.Xc.T @ sp.yc
        for i, (p1, p2) in enumerate(phi_grid):
            beta = _ridge_solve(XtX, Xty, Os, Oz, p1, p2)
            resid = sp.y_test - (sp.y_mean + sp.X_test @ beta)
            errs[i, j] = np.sqrt(np.mean(resid**2))
    rows = [(1.0, 0.0, p1, p2, float(errs[i].mean()),
             float(errs[i].std(ddof=1)) if errs.shape[1] > 1 else float("nan"))
            for i, (p1, p2) in enumerate(phi_grid)]
    i = _pick(rows, len(ws.splits), one_se)
    p1, p2 = phi_grid[i]
    full = ws.full
    beta = _ridge_solve(full.Xc.T @ full.Xc, full.Xc.T @ full.yc, Os, Oz, p1, p2)
    table = [{"phi1": r[2], "phi2": r[3], "mean_pe": r[4], "sd_pe": r[5]} for r in rows]
    return beta, TuningChoice(0.0, p1, p2, rows[i][4]), table


def _ridge_phi_grid(ws, dd_gram_s, dd_gram_z, exponents):
    L, M = dd_gram_s.shape[0], dd_gram_z.shape[0]
    x_trace = float(np.sum(ws.full.Xc**2))
    scale_s = _phi_scale(x_trace, ws.K * M * np.trace(dd_gram_s))
    scale_z = _phi_scale(x_trace, ws.K * L * np.trace(dd_gram_z))
    return _phi_pairs(exponents, scale_s, scale_z)


# ---------------------------------------------------------------------------
# sparse-smooth (group lasso) CV


def _rotations(Rinv, grams):
    """Per group ``T_k = R_k^{-T} V_k`` and eigenvalues ``s_k`` of ``2 R^{-1} X^T X R^{-T}``."""
    K, G, _ = Rinv.shape
    T = np.empty((K, G, G))
    S = np.empty((K, G))
    for k in range(K):
        H = 2.0 * Rinv[k] @ grams[k] @ Rinv[k].T
        s, v = np.linalg.eigh(0.5 * (H + H.T))
        S[k] = np.clip(s, 0.0, None)
        T[k] = Rinv[k].T @ v
    return T, S


def _path(Xc, yc, T, S, ratios, lam_max, opts):
    """Coefficients (original coordinates) along ``lam_max * ratios``."""
    N = yc.size
    K, G, _ = T.shape
    blocks = Xc.reshape(N, K, G).transpose(1, 0, 2)
    lams = lam_max * ratios
    if opts.solver == "exact":
        # (K, G, N): rotated blocks, one row per eigen-direction
        Wt = np.ascontiguousarray(np.matmul(T.transpose(0, 2, 1), blocks.transpose(0, 2, 1)))
        thetas, iters, conv = exact_block_path(Wt, S, yc, lams, opts.tol, opts.max_iter,
                                               np.zeros((K, G)))
    else:
        W = np.matmul(blocks, T).transpose(1, 0, 2).reshape(N, K * G)
        problem = GroupProblem(W, yc, G)
        thetas = np.empty((lams.size, K, G))
        conv = np.empty(lams.size, dtype=bool)
        warm = None
        for i, lam in enumerate(lams):
            fit = group_lasso_gmd(problem, lam, tol=opts.tol, max_iter=opts.max_iter,
                                  warm_start=warm)
            thetas[i] = fit.beta.reshape(K, G)
            conv[i] = fit.converged
            warm = fit.beta
    if not np.all(conv):
        logger.warning("group lasso did not converge at %d of %d grid points",
                       int(np.sum(~conv)), conv.size)
    zero = ~np.any(thetas != 0.0, axis=2)
    betas = np.matmul(thetas.transpose(1, 0, 2), T.transpose(0, 2, 1)).transpose(1, 0, 2)
    betas[zero] = 0.0
    return betas


def _lambda_max_full(ws, Rinv):
    full = ws.full
    xty = (full.Xc.T @ full.yc).reshape(ws.K, ws.G)
    v = np.einsum("kgh,kh->kg", Rinv, xty)
    return 2.0 * float(np.max(np.linalg.norm(v, axis=1))) if ws.K else 0.0


def _sparse_smooth_cv(ws, weights, dd_gram_s, dd_gram_z, lambda_ratios, phi_grid, opts):
    """CV over ``(lambda, phi)``; returns (choice, table, full-data beta at the choice)."""
    f, g, h = (np.asarray(w, dtype=float) for w in weights)
    Ps, Pz = _penalty_parts(dd_gram_s, dd_gram_z)
    ratios = np.asarray(lambda_ratios, dtype=float)
    rows = []
    cache = []
    for p1, p2 in phi_grid:
        pen = _factor_penalties(f, g * p1, h * p2, Ps, Pz)
        lam_max = _lambda_max_full(ws, pen.R_inv)
        errs = np.zeros((ratios.size, len(ws.splits)))
        for j, sp in enumerate(ws.splits):
            T, S = _rotations(pen.R_inv, ws.block_grams(sp))
            betas = _path(sp.Xc, sp.yc, T, S, ratios, lam_max, opts)
            pred = sp.y_mean + sp.X_test @ betas.reshape(ratios.size, -1).T
            errs[:, j] = np.sqrt(np.mean((sp.y_test[:, None] - pred) ** 2, axis=0))
        cache.append((pen, lam_max))
        for i, r in enumerate(ratios):
            sd = float(errs[i].std(ddof=1)) if errs.shape[1] > 1 else float("nan")
            rows.append((float(r), float(lam_max * r), p1, p2, float(errs[i].mean()), sd))
    pick = _pick(rows, len(ws.splits), opts.one_se)
    choice_row = rows[pick]
    pen, lam_max = cache[pick // ratios.size]
    i_lam = pick % ratios.size
    T, S = _rotations(pen.R_inv, ws.block_grams(ws.full))
    betas = _path(ws.full.Xc, ws.full.yc, T, S, ratios[: i_lam + 1], lam_max, opts)
    beta = betas[-1]
    table = [{"lambda": r[1], "lambda_ratio": r[0], "phi1": r[2], "phi2": r[3],
              "mean_pe": r[4], "sd_pe": r[5]} for r in rows]
    choice = TuningChoice(choice_row[1], choice_row[2], choice_row[3], choice_row[4])
    return choice, table, beta


def _gl_phi_grid(weights, dd_gram_s, dd_gram_z, exponents):
    f, g, h = (np.asarray(w, dtype=float) for w in weights)
    L, M = dd_gram_s.shape[0], dd_gram_z.shape[0]
    base = float(np.sum(f)) * L * M
    scale_s = _phi_scale(base, float(np.sum(g)) * M * np.trace(dd_gram_s))
    scale_z = _phi_scale(base, float(np.sum(h)) * L * np.trace(dd_gram_z))
    return _phi_pairs(exponents, scale_s, scale_z)


# ---------------------------------------------------------------------------
# public pipeline pieces


def _design_and_y(ds, basis_s, basis_z):
    design = assemble_design(ds, basis_s, basis_z)
    return design, ds.y


def initial_fit(ds, basis_s, basis_z, phi_grid=None, folds=5, opts=None):
    """Smooth-penalized fit of every predictor, smoothing chosen by blocked CV.

    Returns
    -------
    B : list of ndarray
        One ``L x M`` coefficient matrix per predictor.
    choice : TuningChoice
    table : list of dict
    """
    opts = opts or SafeOptions(folds=folds)
    design, y = _design_and_y(ds, basis_s, basis_z)
    ws = _Workspace(design.W, y, design.group_size, folds)
    if phi_grid is None:
        phi_grid = _ridge_phi_grid(ws, basis_s.dd_gram, basis_z.dd_gram, opts.phi_exponents)
    beta, choice, table = _ridge_cv(ws, basis_s.dd_gram, basis_z.dd_gram, phi_grid)
    B = [b.reshape(design.L, design.M) for b in beta.reshape(ws.K, -1)]
    return B, choice, table


def cv_tune(ds, basis_s, basis_z, weights, lambda_grid=None, phi_grid=None, folds=5,
            one_se=False, opts=None):
    """Blocked-CV choice of ``(lambda, phi1, phi2)`` for the adaptive sparse-smooth fit.

    Parameters
    ----------
    weights : tuple of arrays
        ``(f, g, h)``.
    lambda_grid : array_like, optional
        Decreasing fractions of ``lambda_max(phi)``; each smoothing level gets
        its own anchored grid.
    phi_grid : list of (phi1, phi2), optional

    Returns
    -------
    choice : TuningChoice
    table : list of dict
        One record per ``(lambda, phi1, phi2)`` with mean and fold-SD of the
        held-out root mean squared error.
    beta : ndarray
        Full-data coefficients at the chosen tuning.
    """
    opts = replace(opts or SafeOptions(), folds=folds, one_se=one_se)
    design, y = _design_and_y(ds, basis_s, basis_z)
    ws = _Workspace(design.W, y, design.group_size, folds)
    if lambda_grid is None:
        lambda_grid = default_lambda_ratios(opts.n_lambda, ws.splits[0].yc.size,
                                            design.W.shape[1], opts.lambda_min_ratio)
    if phi_grid is None:
        phi_grid = _gl_phi_grid(weights, basis_s.dd_gram, basis_z.dd_gram, opts.phi_exponents)
    return _sparse_smooth_cv(ws, weights, basis_s.dd_gram, basis_z.dd_gram,
                             lambda_grid, phi_grid, opts)


def post_fit(ds, basis_s, basis_z, phi_grid=None, folds=5, opts=None):
    """Smooth-penalized refit of the given predictors.

    Returns ``(B list, fitted values in response units, intercept, choice, table)``.
    """
    opts = opts or SafeOptions(folds=folds)
    design, y = _design_and_y(ds, basis_s, basis_z)
    ws = _Workspace(design.W, y, design.group_size, folds)
    if phi_grid is None:
        phi_grid = _ridge_phi_grid(ws, basis_s.dd_gram, basis_z.dd_gram, opts.phi_exponents)
    beta, choice, table = _ridge_cv(ws, basis_s.dd_gram, basis_z.dd_gram, phi_grid)
    intercept = ws.full.y_mean - float(ws.full.x_mean @ beta)
    fitted = intercept + design.W @ beta
    B = [b.reshape(design.L, design.M) for b in beta.reshape(ws.K, -1)]
    return B, fitted, intercept, choice, table


def safe_select(ds, basis_s, basis_z, opts=None, **overrides):
    """Run the two-stage selection and the post-selection refit.

    Parameters
    ----------
    ds : FunctionalDataset
    basis_s, basis_z : BasisSystem
    opts : SafeOptions, optional
    **overrides
        Field overrides for ``opts`` (for example ``folds=5, d_exponent=1``).

    Returns
    -------
    SelectionResult
    """
    opts = replace(opts or SafeOptions(), **overrides)
    opts.validate()
    t0 = time.perf_counter()
    dd_s, dd_z = basis_s.dd_gram, basis_z.dd_gram
    L, M = basis_s.num_basis, basis_z.num_basis
    design, y = _design_and_y(ds, basis_s, basis_z)
    ws = _Workspace(design.W, y, design.group_size, opts.folds)
    centering = CenteringStats(ws.full.y_mean, ds.X.mean(axis=1))
    cv_tables = {}

    # initial smooth fit and weights
    ridge_grid = _ridge_phi_grid(ws, dd_s, dd_z, opts.phi_exponents)
    beta0, init_choice, cv_tables["initial"] = _ridge_cv(ws, dd_s, dd_z, ridge_grid)
    B0 = [b.reshape(L, M) for b in beta0.reshape(ws.K, -1)]
    w1 = adaptive_weights(B0, dd_s, dd_z, opts.d_exponent, opts.weight_cap, opts.semi_adaptive)

    # stage one
    ratios = default_lambda_ratios(opts.n_lambda, ws.splits[0].yc.size, design.W.shape[1],
                                   opts.lambda_min_ratio)
    grid1 = _gl_phi_grid(w1, dd_s, dd_z, opts.phi_exponents)
    choice1, cv_tables["stage1"], beta1 = _sparse_smooth_cv(ws, w1, dd_s, dd_z, ratios, grid1,
                                                           opts)
    beta1 = beta1.reshape(ws.K, -1)
    stage1 = tuple(int(k) for k in np.flatnonzero(np.any(beta1 != 0.0, axis=1)))
    stage1_B = {k: beta1[k].reshape(L, M) for k in stage1}
    weights = {"stage1": {"f": w1[0].tolist(), "g": w1[1].tolist(), "h": w1[2].tolist()}}

    empty_choice = TuningChoice(float("nan"), float("nan"), float("nan"), float("nan"))
    if not stage1:
        return _intercept_only(ds, ws, centering, choice1, empty_choice, cv_tables, L, M,
                               init_choice, weights, basis_s, basis_z, t0)

    # stage two on the survivors
    cols = np.concatenate([np.arange(k * ws.G, (k + 1) * ws.G) for k in stage1])
    ws2 = _Workspace(design.W[:, cols], y, ws.G, opts.folds)
    w2 = adaptive_weights([stage1_B[k] for k in stage1], dd_s, dd_z, opts.d_exponent,
                          opts.weight_cap, opts.semi_adaptive)
    weights["stage2"] = {"groups": list(stage1), "f": w2[0].tolist(), "g": w2[1].tolist(),
                         "h": w2[2].tolist()}
    ratios2 = default_lambda_ratios(opts.n_lambda, ws2.splits[0].yc.size, cols.size,
                                    opts.lambda_min_ratio)
    grid2 = _gl_phi_grid(w2, dd_s, dd_z, opts.phi_exponents)
    choice2, cv_tables["stage2"], beta2 = _sparse_smooth_cv(ws2, w2, dd_s, dd_z, ratios2, grid2,
                                                           opts)
    beta2 = beta2.reshape(len(stage1), -1)
    stage2 = tuple(stage1[i] for i in np.flatnonzero(np.any(beta2 != 0.0, axis=1)))
    if not stage2:
        return _intercept_only(ds, ws, centering, choice1, choice2, cv_tables, L, M,
                               init_choice, weights, basis_s, basis_z, t0, stage1, stage1_B)

    # post-selection smooth refit
    cols = np.concatenate([np.arange(k * ws.G, (k + 1) * ws.G) for k in stage2])
    ws3 = _Workspace(design.W[:, cols], y, ws.G, opts.folds)
    grid3 = _ridge_phi_grid(ws3, dd_s, dd_z, opts.phi_exponents)
    beta3, post_choice, cv_tables["post"] = _ridge_cv(ws3, dd_s, dd_z, grid3)
    intercept = ws3.full.y_mean - float(ws3.full.x_mean @ beta3)
    fitted = intercept + design.W[:, cols] @ beta3
    final_B = {k: b.reshape(L, M) for k, b in zip(stage2, beta3.reshape(len(stage2), -1))}
    result = SelectionResult(stage1, stage2, choice1, choice2, final_B, cv_tables, centering,
                             intercept, fitted, L, M, init_choice, post_choice, weights,
                             stage1_B, basis_s, basis_z, ds.names,
                             time.perf_counter() - t0)
    result._y = ds.y
    return result


def _intercept_only(ds, ws, centering, choice1, choice2, cv_tables, L, M, init_choice, weights,
                    basis_s, basis_z, t0, stage1=(), stage1_B=None):
    intercept = ws.full.y_mean
    empty = TuningChoice(float("nan"), float("nan"), float("nan"), float("nan"))
    result = SelectionResult(tuple(stage1), (), choice1, choice2, {}, cv_tables, centering,
                             intercept, np.full(ds.n, intercept), L, M, init_choice, empty,
                             weights, stage1_B or {}, basis_s, basis_z, ds.names,
                             time.perf_counter() - t0)
    result._y = ds.y
    return result


class SafeAlgorithm:
    """The full selection-plus-refit pipeline as a fit/predict callable.

    ``SafeAlgorithm(basis_s, basis_z, opts)(ds)`` returns a fitted
    :class:`SelectionResult` whose ``predict`` method maps datasets to
    predictions; that is all the conformal layer relies on.
    """

    def __init__(self, basis_s, basis_z, opts=None):
        self.basis_s = basis_s
        self.basis_z = basis_z
        self.opts = opts or SafeOptions()

    def __call__(self, ds):
        return safe_select(ds, self.basis_s, self.basis_z, self.opts)
