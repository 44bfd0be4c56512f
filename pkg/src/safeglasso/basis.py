"""Orthonormal B-spline bases on a closed interval.

The raw B-spline basis (uniform interior knots, repeated boundary knots) is
rotated by the inverse Cholesky factor of its Gram matrix, so the returned
functions are orthonormal in L2 of the domain.  Gram matrices are computed by
Gauss-Legendre quadrature on every knot interval, which is exact for the
piecewise polynomial integrands involved.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline
from scipy.linalg import cholesky, solve_triangular

from .errors import ConfigurationError, DomainError

__all__ = [
    "BasisSpec",
    "BasisSystem",
    "make_basis",
    "evaluate_basis",
    "evaluate_basis_dd",
    "raw_gram_matrices",
]


@dataclass(frozen=True)
class BasisSpec:
    """Domain and size of a univariate spline basis.

    Parameters
    ----------
    domain_lo, domain_hi : float
        Closed interval the basis lives on.
    num_basis : int
        Number of basis functions.
    spline_order : int, default=4
        Order of the B-splines (4 means cubic).
    """

    domain_lo: float
    domain_hi: float
    num_basis: int
    spline_order: int = 4

    def validate(self):
        lo, hi = float(self.domain_lo), float(self.domain_hi)
        if not (np.isfinite(lo) and np.isfinite(hi)) or not lo < hi:
            raise ConfigurationError(f"degenerate basis domain [{lo}, {hi}]")
        if int(self.spline_order) < 1:
            raise ConfigurationError("spline_order must be a positive integer")
        if int(self.num_basis) < int(self.spline_order):
            raise ConfigurationError(
                f"num_basis={self.num_basis} is smaller than spline_order={self.spline_order}"
            )


@dataclass(frozen=True, eq=False)
class BasisSystem:
    """An orthonormalized B-spline basis together with its Gram matrices.

    ``orthonormalizer`` is the matrix ``T`` such that the orthonormal functions
    are ``phi(x) = T @ b(x)`` where ``b`` holds the raw B-splines.
    """

    spec: BasisSpec
    knot_vector: np.ndarray
    orthonormalizer: np.ndarray
    gram: np.ndarray
    dd_gram: np.ndarray
    _raw: BSpline = field(repr=False)
    _raw_dd: BSpline = field(repr=False)

    @property
    def num_basis(self):
        return self.spec.num_basis

    @property
    def domain(self):
        return (float(self.spec.domain_lo), float(self.spec.domain_hi))

    def __call__(self, points):
        return evaluate_basis(self, points)

    def dd(self, points):
        return evaluate_basis_dd(self, points)


def _knots(spec):
    order = int(spec.spline_order)
    n_inner = int(spec.num_basis) - order
    lo, hi = float(spec.domain_lo), float(spec.domain_hi)
    breaks = np.linspace(lo, hi, n_inner + 2)
    return np.concatenate([np.full(order - 1, lo), breaks, np.full(order - 1, hi)])


def _quadrature_nodes(knots, n_points):
    """Gauss-Legendre nodes and weights on every nondegenerate knot interval."""
    x, w = np.polynomial.legendre.leggauss(n_points)
    breaks = np.unique(knots)
    a, b = breaks[:-1], breaks[1:]
    half = 0.5 * (b - a)
    nodes = (0.5 * (a + b))[:, None] + half[:, None] * x[None, :]
    weights = half[:, None] * w[None, :]
    return nodes.ravel(), weights.ravel()


def _raw_splines(spec, knots):
    k = int(spec.spline_order) - 1
    n = int(spec.num_basis)
    raw = BSpline(knots, np.eye(n), k, extrapolate=False)
    if k >= 2:
        raw_dd = raw.derivative(2)
    else:
        raw_dd = None
    return raw, raw_dd


def _eval_raw(spline, points, n):
    if spline is None:
        return np.zeros((len(points), n))
    out = spline(points)
    # the last knot belongs to the final interval; guard against nan from rounding
    return np.nan_to_num(out, nan=0.0)


def raw_gram_matrices(spec):
    """Gram matrices of the raw B-splines and of their second derivatives."""
    spec.validate()
    knots = _knots(spec)
    raw, raw_dd = _raw_splines(spec, knots)
    nodes, weights = _quadrature_nodes(knots, int(spec.spline_order) + 1)
    b = _eval_raw(raw, nodes, spec.num_basis)
    bdd = _eval_raw(raw_dd, nodes, spec.num_basis)
    gram = (b * weights[:, None]).T @ b
    dd_gram = (bdd * weights[:, None]).T @ bdd
    return 0.5 * (gram + gram.T), 0.5 * (dd_gram + dd_gram.T)


def make_basis(spec):
    """Build the orthonormal basis described by ``spec``.

    Examples
    --------
    >>> basis = make_basis(BasisSpec(0.0, 1.0, 6))
    >>> bool(np.allclose(basis.gram, np.eye(6)))
    True
    """
    spec.validate()
    spec = BasisSpec(float(spec.domain_lo), float(spec.domain_hi),
                     int(spec.num_basis), int(spec.spline_order))
    knots = _knots(spec)
    raw, raw_dd = _raw_splines(spec, knots)
    raw_gram, raw_dd_gram = raw_gram_matrices(spec)

    chol = cholesky(raw_gram, lower=True)
    transform = solve_triangular(chol, np.eye(spec.num_basis), lower=True)

    nodes, weights = _quadrature_nodes(knots, spec.spline_order + 1)
    phi = _eval_raw(raw, nodes, spec.num_basis) @ transform.T
    phi_dd = _eval_raw(raw_dd, nodes, spec.num_basis) @ transform.T
    gram = (phi * weights[:, None]).T @ phi
    dd_gram = (phi_dd * weights[:, None]).T @ phi_dd

    for arr in (knots, transform):
        arr.setflags(write=False)
    gram = 0.5 * (gram + gram.T)
    dd_gram = 0.5 * (dd_gram + dd_gram.T)
    gram.setflags(write=False)
    dd_gram.setflags(write=False)
    return BasisSystem(spec, knots, transform, gram, dd_gram, raw, raw_dd)


def _check_points(basis, points):
    pts = np.atleast_1d(np.asarray(points, dtype=float))
    if pts.ndim != 1:
        raise ValueError("points must be one-dimensional")
    lo, hi = basis.domain
    slack = 1e-12 * (hi - lo)
    bad = np.flatnonzero(~((pts >= lo - slack) & (pts <= hi + slack)))
    if bad.size:
        raise DomainError(
            f"{bad.size} point(s) outside basis domain [{lo}, {hi}]; first at index {bad[0]}",
            indices=bad,
        )
    return np.clip(pts, lo, hi)


def evaluate_basis(basis, points):
    """Orthonormal basis functions at ``points``; shape ``(len(points), num_basis)``."""
    pts = _check_points(basis, points)
    return _eval_raw(basis._raw, pts, basis.num_basis) @ basis.orthonormalizer.T


def evaluate_basis_dd(basis, points):
    """Second derivatives of the orthonormal basis functions at ``points``."""
    pts = _check_points(basis, points)
    return _eval_raw(basis._raw_dd, pts, basis.num_basis) @ basis.orthonormalizer.T


def evaluate_raw_basis(basis, points):
    """Raw (non-orthonormalized) B-spline values; rows sum to one."""
    pts = _check_points(basis, points)
    return _eval_raw(basis._raw, pts, basis.num_basis)
