import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import riemann_dd_gram, riemann_gram

from safeglasso import BasisSpec, ConfigurationError, DomainError, make_basis
from safeglasso.basis import (evaluate_basis, evaluate_basis_dd, evaluate_raw_basis,
                              raw_gram_matrices)


def test_small_cubic_basis_is_orthonormal():
    b = make_basis(BasisSpec(0.0, 1.0, 4, 4))
    assert np.max(np.abs(b.gram - np.eye(4))) <= 1e-8


def test_dd_gram_matches_dense_riemann():
    b = make_basis(BasisSpec(0.0, 1.0, 15, 4))
    ref = riemann_dd_gram(b, 100_000)
    # relative to the scale of the entries, which are large for L=15
    assert np.max(np.abs(b.dd_gram - ref)) <= 1e-5 * max(1.0, np.max(np.abs(ref)))


def test_dd_gram_null_space_is_two_dimensional():
    b = make_basis(BasisSpec(-1.0, 1.0, 7, 4))
    ev = np.linalg.eigvalsh(b.dd_gram)
    assert np.sum(np.abs(ev) <= 1e-8 * max(1.0, ev.max())) == 2


@pytest.mark.parametrize("spec", [BasisSpec(0, 1, 3, 4), BasisSpec(1, 1, 5), BasisSpec(2, 1, 5),
                                  BasisSpec(0, np.inf, 5)])
def test_invalid_specs(spec):
    with pytest.raises(ConfigurationError):
        make_basis(spec)


def test_raw_partition_of_unity(rng):
    b = make_basis(BasisSpec(-2.0, 3.0, 9))
    t = rng.uniform(-2.0, 3.0, 200)
    assert np.allclose(evaluate_raw_basis(b, t).sum(axis=1), 1.0, atol=1e-12)


def test_constant_basis():
    b = make_basis(BasisSpec(0.0, 1.0, 1, 1))
    assert evaluate_basis(b, [0.3])[0, 0] == pytest.approx(1.0)


def test_riemann_orthonormality_of_evaluations():
    b = make_basis(BasisSpec(0.0, 2.0, 10))
    assert np.max(np.abs(riemann_gram(b, 200_000) - np.eye(10))) <= 1e-4


def test_linear_splines_have_zero_second_derivative():
    b = make_basis(BasisSpec(0.0, 1.0, 6, 2))
    assert np.all(evaluate_basis_dd(b, np.linspace(0, 1, 17)) == 0.0)


def test_second_derivative_matches_finite_difference(rng):
    b = make_basis(BasisSpec(0.0, 1.0, 8))
    h = 1e-4
    # keep away from knots (multiples of 1/5) where the cubic pieces join
    t = np.array([0.1, 0.33, 0.5, 0.77, 0.9])
    fd = (evaluate_basis(b, t + h) - 2 * evaluate_basis(b, t) + evaluate_basis(b, t - h)) / h**2
    an = evaluate_basis_dd(b, t)
    assert np.max(np.abs(fd - an)) <= 1e-4 * np.max(np.abs(an))


def test_dd_gram_self_consistent_with_dd_evaluations():
    b = make_basis(BasisSpec(0.0, 1.0, 12))
    # Gauss-Legendre on every knot interval, exact for the quadratic products
    knots = np.unique(b.knot_vector)
    x, w = np.polynomial.legendre.leggauss(6)
    a, c = knots[:-1, None], knots[1:, None]
    t = (0.5 * (c - a) * x + 0.5 * (c + a)).ravel()
    wt = (0.5 * (c - a) * w).ravel()
    dd = evaluate_basis_dd(b, t)
    assert np.max(np.abs((dd * wt[:, None]).T @ dd - b.dd_gram)) <= 1e-6 * np.max(b.dd_gram)


def test_out_of_domain_raises_with_indices():
    b = make_basis(BasisSpec(0.0, 1.0, 5))
    with pytest.raises(DomainError) as exc:
        evaluate_basis(b, [0.5, 1.2, -0.1])
    assert list(exc.value.indices) == [1, 2]


def test_endpoints_are_inside():
    b = make_basis(BasisSpec(0.0, 1.0, 5))
    v = evaluate_basis(b, [0.0, 1.0])
    assert np.all(np.isfinite(v)) and np.any(v[1] != 0)


def test_knot_vector_layout():
    b = make_basis(BasisSpec(0.0, 1.0, 9, 4))
    k = b.knot_vector
    assert np.all(k[:4] == 0.0) and np.all(k[-4:] == 1.0)
    interior = k[4:-4]
    assert interior.size == 5
    assert np.allclose(np.diff(np.concatenate([[0.0], interior, [1.0]])), 1 / 6)


@given(st.integers(4, 20), st.floats(0.2, 5.0), st.floats(-3.0, 3.0))
def test_basis_invariants(L, width, lo):
    b = make_basis(BasisSpec(lo, lo + width, L))
    assert np.max(np.abs(b.gram - np.eye(L))) <= 1e-8
    assert np.array_equal(b.dd_gram, b.dd_gram.T)
    assert np.linalg.eigvalsh(b.dd_gram).min() >= -1e-10 * max(1.0, np.abs(b.dd_gram).max())


@given(st.integers(4, 14), st.floats(0.25, 4.0))
def test_scale_covariance(L, c):
    # raw splines: second derivative ~ c^-2, squared and integrated ~ c^-3;
    # the orthonormal functions carry an extra c^-1/2 each, hence c^-4
    raw1 = raw_gram_matrices(BasisSpec(0.0, 1.0, L))[1]
    rawc = raw_gram_matrices(BasisSpec(0.0, c, L))[1]
    assert np.allclose(rawc, raw1 * c**-3, rtol=1e-9, atol=1e-9 * np.abs(raw1).max())
    o1 = make_basis(BasisSpec(0.0, 1.0, L)).dd_gram
    oc = make_basis(BasisSpec(0.0, c, L)).dd_gram
    assert np.allclose(oc, o1 * c**-4, rtol=1e-8, atol=1e-8 * np.abs(o1).max())


def test_basis_is_immutable():
    b = make_basis(BasisSpec(0.0, 1.0, 5))
    with pytest.raises(ValueError):
        b.gram[0, 0] = 2.0
