"""Functional datasets and the grouped tensor-product design matrix.

Each instance carries a scalar response ``y``, a scalar covariate ``z`` and
``K`` curves sampled on a shared grid.  The integral of a curve against a
coefficient surface ``gamma(s, z) = omega(s)^T B tau(z)`` is approximated by a
left Riemann sum, which turns the model into an ordinary linear model whose
``K`` column groups each hold ``L * M`` columns.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import BSpline
from scipy.linalg import cho_factor, cho_solve

from .basis import BasisSpec, evaluate_basis, raw_gram_matrices, _knots
from .cv import block_cv_partition, fold_indices, prediction_error
from .errors import ConfigurationError, DataError, DomainError

logger = logging.getLogger(__name__)

__all__ = [
    "FunctionalDataset",
    "CenteringStats",
    "GroupedDesign",
    "window_history",
    "riemann_weights",
    "center",
    "uncenter",
    "assemble_design",
    "integrate_surfaces",
    "penalized_smooth",
]


@dataclass(frozen=True, eq=False)
class FunctionalDataset:
    """Scalar response, scalar covariate and ``K`` sampled functional predictors.

    Attributes
    ----------
    y : ndarray, shape (N,)
    z : ndarray, shape (N,)
    X : ndarray, shape (K, N, R)
        ``X[k, i, r]`` is predictor ``k`` of instance ``i`` at ``s_grid[r]``.
    s_grid : ndarray, shape (R,)
    names : tuple of str
    """

    y: np.ndarray
    z: np.ndarray
    X: np.ndarray
    s_grid: np.ndarray
    names: tuple = field(default=())

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        z = np.asarray(self.z, dtype=float).ravel()
        X = np.asarray(self.X, dtype=float)
        s = np.asarray(self.s_grid, dtype=float).ravel()
        if X.ndim != 3:
            raise DataError("X must have shape (K, N, R)")
        K, N, R = X.shape
        if y.size != N or z.size != N:
            raise DataError(f"y, z and X disagree on N: {y.size}, {z.size}, {N}")
        if s.size != R:
            raise DataError(f"s_grid has {s.size} points but X has R={R}")
        if R > 1 and np.any(np.diff(s) <= 0):
            raise DataError("s_grid must be strictly increasing")
        names = tuple(self.names) if self.names else tuple(f"x{k + 1}" for k in range(K))
        if len(names) != K:
            raise DataError(f"{len(names)} names given for K={K} predictors")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "s_grid", s)
        object.__setattr__(self, "names", names)

    @property
    def n(self):
        return self.y.size

    @property
    def k(self):
        return self.X.shape[0]

    @property
    def r(self):
        return self.s_grid.size

    def subset(self, rows):
        rows = np.asarray(rows)
        return replace(self, y=self.y[rows], z=self.z[rows], X=self.X[:, rows, :])

    def select_groups(self, groups):
        groups = list(groups)
        return replace(self, X=self.X[groups], names=tuple(self.names[g] for g in groups))


@dataclass(frozen=True, eq=False)
class CenteringStats:
    """Means removed by :func:`center`.

    ``x_means[k, r]`` is the mean of predictor ``k`` at grid point ``r``.
    """

    y_mean: float
    x_means: np.ndarray


@dataclass(frozen=True, eq=False)
class GroupedDesign:
    """Design matrix whose columns come in ``K`` equal-size groups.

    Within group ``k`` column ``l * M + m`` multiplies coefficient ``B_k[l, m]``,
    i.e. coefficients are the row-major flattening of the ``L x M`` matrix.
    """

    W: np.ndarray
    group_offsets: np.ndarray
    group_size: int
    riemann_weights: np.ndarray
    L: int = 0
    M: int = 0
    n_clamped: int = 0

    @property
    def n_groups(self):
        return len(self.group_offsets)

    def block(self, k):
        o = self.group_offsets[k]
        return self.W[:, o:o + self.group_size]

    def blocks(self):
        N = self.W.shape[0]
        return self.W.reshape(N, self.n_groups, self.group_size)


def window_history(series, z_series, y_series, delta, names=None):
    """Slice recent-past windows out of synchronized time series.

    Instance ``i`` (for ``i = delta .. T-1``, zero based) pairs the concurrent
    response and covariate with the ``delta + 1`` most recent values of every
    signal, placed on the grid ``-delta, ..., 0``.

    Parameters
    ----------
    series : array_like, shape (T, K)
    z_series, y_series : array_like, shape (T,)
    delta : int
        Window length in samples (``delta = 40`` at 120 Hz is one third of a second).
    """
    series = np.asarray(series, dtype=float)
    if series.ndim == 1:
        series = series[:, None]
    T, K = series.shape
    z_series = np.asarray(z_series, dtype=float).ravel()
    y_series = np.asarray(y_series, dtype=float).ravel()
    delta = int(delta)
    if delta < 1:
        raise ConfigurationError("delta must be a positive integer")
    if z_series.size != T or y_series.size != T:
        raise DataError("series, z_series and y_series must share their length")
    if T <= delta:
        raise DataError(f"need more than delta={delta} samples, got T={T}")
    windows = np.lib.stride_tricks.sliding_window_view(series, delta + 1, axis=0)
    # windows: (T - delta, K, delta + 1)
    X = np.ascontiguousarray(np.transpose(windows, (1, 0, 2)))
    s_grid = np.arange(-delta, 1, dtype=float)
    return FunctionalDataset(y_series[delta:], z_series[delta:], X, s_grid,
                             names=tuple(names) if names is not None else ())


def riemann_weights(s_grid):
    """Left Riemann weights ``s_r - s_{r-1}``, with the first cell copied from the second."""
    s = np.asarray(s_grid, dtype=float).ravel()
    if s.size < 2:
        raise DataError("a Riemann grid needs at least two points")
    d = np.diff(s)
    if np.any(d <= 0):
        raise DataError("s_grid must be strictly increasing")
    return np.concatenate([d[:1], d])


def center(ds):
    """Remove the response mean and the pointwise predictor means."""
    y_mean = float(ds.y.mean())
    x_means = ds.X.mean(axis=1)
    out = replace(ds, y=ds.y - y_mean, X=ds.X - x_means[:, None, :])
    return out, CenteringStats(y_mean, x_means)


def uncenter(ds, stats):
    """Inverse of :func:`center`."""
    return replace(ds, y=ds.y + stats.y_mean, X=ds.X + stats.x_means[:, None, :])


def _z_matrix(basis_z, z, clamp):
    lo, hi = basis_z.domain
    z = np.asarray(z, dtype=float)
    outside = np.flatnonzero((z < lo) | (z > hi))
    if outside.size and not clamp:
        raise DomainError(
            f"z outside basis domain [{lo}, {hi}] at indices {outside[:10].tolist()}"
            + (" ..." if outside.size > 10 else ""),
            indices=outside,
        )
    if outside.size:
        logger.warning("clamped %d z value(s) to [%g, %g]", outside.size, lo, hi)
    return evaluate_basis(basis_z, np.clip(z, lo, hi)), int(outside.size)


def projected_curves(ds, basis_s):
    """Riemann inner products ``sum_r Delta_r X_ki(s_r) omega_l(s_r)``; shape (K, N, L)."""
    delta = riemann_weights(ds.s_grid)
    omega = evaluate_basis(basis_s, ds.s_grid)
    return np.einsum("knr,rl->knl", ds.X, omega * delta[:, None], optimize=True)


def assemble_design(ds, basis_s, basis_z, clamp_z=False):
    """Grouped design with row ``i`` of group ``k`` equal to ``X_ki_omega kron tau(z_i)``.

    Parameters
    ----------
    clamp_z : bool, default=False
        Clamp out-of-domain ``z`` to the domain boundary (counted in
        ``n_clamped``) instead of raising :class:`DomainError`.
    """
    tau, n_clamped = _z_matrix(basis_z, ds.z, clamp_z)
    x_omega = projected_curves(ds, basis_s)
    K, N, L = x_omega.shape
    M = tau.shape[1]
    W = np.einsum("knl,nm->nklm", x_omega, tau, optimize=True).reshape(N, K * L * M)
    offsets = np.arange(K) * (L * M)
    return GroupedDesign(W, offsets, L * M, riemann_weights(ds.s_grid), L, M, n_clamped)


def integrate_surfaces(ds, surfaces):
    """Riemann approximation of ``sum_k int X_ki(s) gamma_k(s, z_i) ds``.

    ``surfaces`` maps a predictor index to a callable ``gamma(s, z)`` that
    broadcasts over arrays; predictors absent from the mapping contribute zero.
    """
    delta = riemann_weights(ds.s_grid)
    mu = np.zeros(ds.n)
    S, Z = np.meshgrid(ds.s_grid, ds.z)  # (N, R)
    for k, gamma in surfaces.items():
        g = np.asarray(gamma(S, Z), dtype=float) * np.ones_like(S)
        mu += np.sum(ds.X[k] * g * delta[None, :], axis=1)
    return mu


def penalized_smooth(series, times, smooth_grid, folds=5, num_basis=None):
    """Cubic smoothing spline fit and first derivative of a time series.

    A B-spline basis with a second-derivative roughness penalty is fitted by
    penalized least squares; the penalty level is chosen by blocked
    cross-validation over ``smooth_grid``.  Grid values are relative: they are
    multiplied by ``trace(B^T B) / trace(P)`` so that ``1`` balances fit and
    roughness.

    Returns
    -------
    smoothed, derivative : ndarray, shape (T,)
    chosen_smooth : float
        Selected grid value (relative units).
    """
    y = np.asarray(series, dtype=float).ravel()
    t = np.asarray(times, dtype=float).ravel()
    grid = np.atleast_1d(np.asarray(smooth_grid, dtype=float))
    if grid.size == 0:
        raise ConfigurationError("smooth_grid is empty")
    if np.any(grid < 0):
        raise ConfigurationError("smooth_grid values must be nonnegative")
    T = y.size
    if T < 10 or t.size != T:
        raise DataError("need at least 10 samples with matching times")
    if np.any(np.diff(t) <= 0):
        raise DataError("times must be strictly increasing")
    if num_basis is None:
        num_basis = int(min(max(8, T // 3), 200))
    spec = BasisSpec(t[0], t[-1], num_basis, 4)
    knots = _knots(spec)
    B = BSpline.design_matrix(t, knots, 3).toarray()
    _, P = raw_gram_matrices(spec)
    scale = np.trace(B.T @ B) / np.trace(P)

    labels = block_cv_partition(T, folds)
    cv = np.zeros(grid.size)
    for train, test in fold_indices(labels):
        Bt = B[train]
        BtB, Bty = Bt.T @ Bt, Bt.T @ y[train]
        for j, lam in enumerate(grid):
            coef = _penalized_solve(BtB, Bty, lam * scale * P)
            cv[j] += prediction_error(y[test], B[test] @ coef) / folds
    # ties go to the smoother fit
    best = max(range(grid.size), key=lambda j: (-cv[j], grid[j]))
    lam = float(grid[best])
    coef = _penalized_solve(B.T @ B, B.T @ y, lam * scale * P)
    spline = BSpline(knots, coef, 3)
    return spline(t), spline.derivative(1)(t), lam


def _penalized_solve(BtB, Bty, penalty):
    A = BtB + penalty
    jitter = 0.0
    for _ in range(2):
        try:
            c = cho_factor(A + jitter * np.eye(A.shape[0]), lower=True)
            return cho_solve(c, Bty)
        except np.linalg.LinAlgError:
            jitter = 1e-10 * np.trace(A) / A.shape[0]
    return np.linalg.lstsq(A, Bty, rcond=None)[0]
