"""Contiguous (blocked) cross-validation folds."""

import numpy as np

from .errors import ConfigurationError

__all__ = ["block_cv_partition", "fold_indices", "prediction_error"]


def block_cv_partition(n, folds=5):
    """Assign each of ``n`` time-ordered instances to a contiguous fold.

    Block sizes differ by at most one and the leading blocks take the
    remainder, so ``n=11, folds=5`` gives sizes ``(3, 2, 2, 2, 2)``.

    Returns
    -------
    ndarray of int, shape (n,)
        Fold label (0-based) of every instance.
    """
    n, folds = int(n), int(folds)
    if folds < 2:
        raise ConfigurationError("need at least two folds")
    if n < folds:
        raise ConfigurationError(f"cannot split {n} instances into {folds} folds")
    base, extra = divmod(n, folds)
    sizes = np.full(folds, base)
    sizes[:extra] += 1
    return np.repeat(np.arange(folds), sizes)


def fold_indices(labels):
    """List of ``(train_idx, test_idx)`` pairs for fold labels."""
    labels = np.asarray(labels)
    out = []
    for f in np.unique(labels):
        test = np.flatnonzero(labels == f)
        train = np.flatnonzero(labels != f)
        out.append((train, test))
    return out


def prediction_error(y, yhat):
    """Root mean squared held-out error of one fold."""
    resid = np.asarray(y, dtype=float) - np.asarray(yhat, dtype=float)
    return float(np.sqrt(np.sum(resid**2) / resid.size))
