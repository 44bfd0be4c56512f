"""Split-conformal prediction bands around an arbitrary fit/predict algorithm.

The base algorithm is any callable ``fit(ds) -> model`` whose result exposes
``model.predict(ds)``; nothing else about it is inspected.  Each call must
return an independent model, since the two half-fits are kept side by side.  With the default
:class:`~safeglasso.selection.SafeAlgorithm` each half-sample runs the whole
selection and refit pipeline with its own cross-validation.

Two bands are provided.

* split: fit on one half, take the ``p``-th smallest absolute residual on the
  other half, ``p = ceil((N/2 + 1)(1 - alpha))``, as a constant half-width
  around predictions at new points.
* rank-one-out (ROO): fit on each half; an in-sample point ``i`` gets the
  prediction of the model that did not see it and the ``m``-th smallest of the
  other held-out residuals of that model, ``m = ceil((N/2)(1 - alpha))``.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataError

__all__ = [
    "ConformalBand",
    "split_indices",
    "split_rank",
    "roo_rank",
    "split_conformal",
    "roo_conformal",
    "conformal_pair",
]


@dataclass(frozen=True, eq=False)
class ConformalBand:
    """Symmetric prediction intervals ``centers -/+ half_widths``."""

    centers: np.ndarray
    half_widths: np.ndarray
    alpha: float
    method: str
    seed: int
    split: tuple = ()

    def __post_init__(self):
        if self.centers.shape != self.half_widths.shape:
            raise DataError("centers and half_widths differ in shape")
        if np.any(self.half_widths < 0):
            raise DataError("half widths must be nonnegative")

    @property
    def lower(self):
        return self.centers - self.half_widths

    @property
    def upper(self):
        return self.centers + self.half_widths

    def contains(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape != self.centers.shape:
            raise DataError(f"expected {self.centers.size} responses, got {y.size}")
        return (self.lower <= y) & (y <= self.upper)

    def __len__(self):
        return self.centers.size


def _check(n, alpha):
    if n < 4:
        raise ConfigurationError(f"conformal bands need N >= 4, got {n}")
    if not 0 < alpha < 1:
        raise ConfigurationError(f"alpha must lie in (0, 1), got {alpha}")


def split_indices(n, seed):
    """Random halves ``(I1, I2)`` of ``range(n)``; ``I1`` takes the extra point when ``n`` is odd."""
    perm = np.random.default_rng(seed).permutation(n)
    n1 = (n + 1) // 2
    return np.sort(perm[:n1]), np.sort(perm[n1:])


def split_rank(n, alpha):
    """``p = ceil((n/2 + 1)(1 - alpha))``."""
    return int(math.ceil((n / 2.0 + 1.0) * (1.0 - alpha)))


def roo_rank(n, alpha):
    """``m = ceil((n/2)(1 - alpha))``."""
    return int(math.ceil((n / 2.0) * (1.0 - alpha)))


def _kth_smallest(values, k):
    return float(np.sort(values, kind="stable")[k - 1])


def _split_feasible(n, n2, alpha):
    p = split_rank(n, alpha)
    if p > n2:
        min_alpha = 1.0 - n2 / (n / 2.0 + 1.0)
        raise ConfigurationError(
            f"alpha={alpha} is too small for N={n}: rank {p} exceeds the {n2} calibration "
            f"residuals; the minimum feasible alpha is {min_alpha:.6g}")
    return p


def _roo_feasible(n, n_min, alpha):
    m = roo_rank(n, alpha)
    if m > n_min - 1:
        min_alpha = 1.0 - (n_min - 1) / (n / 2.0)
        raise ConfigurationError(
            f"alpha={alpha} is too small for N={n}: rank {m} exceeds the {n_min - 1} "
            f"leave-one-out residuals; the minimum feasible alpha is {min_alpha:.6g}")
    return m


def _split_band(resid2, centers, n, alpha, seed, split):
    p = _split_feasible(n, resid2.size, alpha)
    d = _kth_smallest(resid2, p)
    return ConformalBand(np.asarray(centers, dtype=float), np.full(len(centers), d), float(alpha),
                         "split", seed, split)


def _roo_band(halves, n, alpha, seed, split):
    """``halves`` = [(held-out indices, predictions there, residuals there), ...]."""
    m = _roo_feasible(n, min(h[0].size for h in halves), alpha)
    centers = np.empty(n)
    widths = np.empty(n)
    for idx, pred, res in halves:
        order = np.argsort(res, kind="stable")
        ranked = res[order]
        pos = np.empty(idx.size, dtype=int)
        pos[order] = np.arange(idx.size)
        # m-th smallest of the others: skip over the point itself when it sits at or below rank m
        d = np.where(pos < m, ranked[m] if m < idx.size else np.nan, ranked[m - 1])
        centers[idx] = pred
        widths[idx] = d
    return ConformalBand(centers, widths, float(alpha), "roo", seed, split)


def split_conformal(train, new_ds, alpha, seed, fit_algorithm):
    """Split-conformal band at the rows of ``new_ds``.

    Parameters
    ----------
    train : FunctionalDataset
    new_ds : FunctionalDataset
        Covariates of the targets; its responses are not used.
    alpha : float
        Miscoverage level.
    seed : int
        Seed of the random split.
    fit_algorithm : callable
        ``fit_algorithm(ds)`` returns an object with ``predict(ds)``.
    """
    n = train.n
    _check(n, alpha)
    i1, i2 = split_indices(n, seed)
    _split_feasible(n, i2.size, alpha)
    model = fit_algorithm(train.subset(i1))
    resid2 = np.abs(train.y[i2] - model.predict(train.subset(i2)))
    return _split_band(resid2, model.predict(new_ds), n, alpha, seed, (i1, i2))


def roo_conformal(ds, alpha, seed, fit_algorithm):
    """Rank-one-out band at the ``N`` in-sample points of ``ds``."""
    n = ds.n
    _check(n, alpha)
    i1, i2 = split_indices(n, seed)
    _roo_feasible(n, i2.size, alpha)
    halves = []
    for fit_idx, held in ((i1, i2), (i2, i1)):
        model = fit_algorithm(ds.subset(fit_idx))
        pred = model.predict(ds.subset(held))
        halves.append((held, pred, np.abs(ds.y[held] - pred)))
    return _roo_band(halves, n, alpha, seed, (i1, i2))


def conformal_pair(ds, new_ds, alphas, seed, fit_algorithm):
    """Split and ROO bands for several levels from the same two half-fits.

    The split band uses the model fitted on ``I1``, exactly as
    :func:`split_conformal` does with the same seed, and the ROO band uses both
    half-models, as :func:`roo_conformal` does.

    Returns
    -------
    dict
        ``{alpha: {"split": ConformalBand, "roo": ConformalBand}}``; the split
        entry is omitted when ``new_ds`` is None.
    """
    n = ds.n
    for a in alphas:
        _check(n, a)
    i1, i2 = split_indices(n, seed)
    for a in alphas:
        _split_feasible(n, i2.size, a)
        _roo_feasible(n, i2.size, a)
    m1 = fit_algorithm(ds.subset(i1))
    m2 = fit_algorithm(ds.subset(i2))
    pred2 = m1.predict(ds.subset(i2))
    pred1 = m2.predict(ds.subset(i1))
    res2 = np.abs(ds.y[i2] - pred2)
    res1 = np.abs(ds.y[i1] - pred1)
    new_centers = m1.predict(new_ds) if new_ds is not None else None
    out = {}
    for a in alphas:
        bands = {"roo": _roo_band([(i2, pred2, res2), (i1, pred1, res1)], n, a, seed, (i1, i2))}
        if new_centers is not None:
            bands["split"] = _split_band(res2, new_centers, n, a, seed, (i1, i2))
        out[a] = bands
    return out
