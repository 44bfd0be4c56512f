"""Selection and prediction quality measures.

Index sets are zero based here, like everywhere in the library; only the
command-line artifacts use one-based predictor labels.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .errors import DataError

__all__ = ["TruthSpec", "MetricReport", "selection_metrics", "mse", "coverage_stats",
           "aggregate_reports"]


@dataclass(frozen=True)
class TruthSpec:
    """Ground truth for selection scoring.

    When ``flexion_set`` and ``extension_set`` are given, the true-positive
    rate counts a hit per partition (a partition is found when any of its
    members is selected) and relative sparsity uses ``ideal_size``.
    """

    K_total: int
    active: frozenset
    flexion_set: frozenset = None
    extension_set: frozenset = None
    ideal_size: int = None

    def __post_init__(self):
        object.__setattr__(self, "active", frozenset(int(k) for k in self.active))
        for name in ("flexion_set", "extension_set"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, frozenset(int(k) for k in v))
        if self.K_total < 1:
            raise DataError("K_total must be positive")
        universe = set(range(self.K_total))
        if not self.active <= universe:
            raise DataError("active set outside 0..K_total-1")
        if self.partitioned:
            if self.flexion_set is None or self.extension_set is None:
                raise DataError("both partitions must be given")
            if not (self.flexion_set | self.extension_set) <= universe:
                raise DataError("partition outside 0..K_total-1")
            if self.flexion_set & self.extension_set:
                raise DataError("partitions must be disjoint")
            if self.ideal_size is None:
                object.__setattr__(self, "ideal_size", 2)
            if not self.active:
                object.__setattr__(self, "active", self.flexion_set | self.extension_set)

    @property
    def partitioned(self):
        return self.flexion_set is not None or self.extension_set is not None


@dataclass
class MetricReport:
    size: int
    sp: float
    fpr: float
    tpr: float
    rsp: float = None
    mse: float = None
    coverage: float = None
    mean_width: float = None

    def to_dict(self):
        return asdict(self)


def selection_metrics(selected, truth):
    """Size, sparsity, relative sparsity and true/false positive rates of a selected set."""
    sel = frozenset(int(k) for k in selected)
    K = truth.K_total
    if not sel <= set(range(K)):
        raise DataError("selected indices outside 0..K_total-1")
    size = len(sel)
    sp = 1.0 - size / K
    inactive = set(range(K)) - truth.active
    fpr = len(sel & inactive) / len(inactive) if inactive else 0.0
    rsp = None
    if truth.partitioned:
        tpr = (float(bool(sel & truth.flexion_set)) + float(bool(sel & truth.extension_set))) / 2.0
        rsp = sp / (1.0 - truth.ideal_size / K)
    else:
        tpr = len(sel & truth.active) / len(truth.active) if truth.active else 0.0
    return MetricReport(size, sp, fpr, tpr, rsp)


def mse(y, yhat):
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape:
        raise DataError(f"length mismatch: {y.shape} vs {yhat.shape}")
    if y.size == 0:
        raise DataError("empty input")
    return float(np.mean((y - yhat) ** 2))


def coverage_stats(band, y_true):
    """``(coverage, mean interval width, binomial standard error)``."""
    y = np.asarray(y_true, dtype=float)
    if y.shape != band.centers.shape:
        raise DataError(f"length mismatch: {y.size} responses for {band.centers.size} intervals")
    cov = float(np.mean(band.contains(y)))
    width = float(np.mean(2.0 * band.half_widths))
    return cov, width, float(np.sqrt(cov * (1.0 - cov) / y.size))


def aggregate_reports(reports):
    """Mean and sample SD (None for a single replicate) of every numeric field."""
    out = {}
    if not reports:
        return out
    for key in reports[0].to_dict():
        vals = [getattr(r, key) for r in reports]
        if any(v is None for v in vals):
            continue
        arr = np.asarray(vals, dtype=float)
        out[key] = {"mean": float(arr.mean()),
                    "sd": float(arr.std(ddof=1)) if arr.size > 1 else None}
    return out
