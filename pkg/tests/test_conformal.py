import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from safeglasso import (ConfigurationError, ConformalBand, DataError, FunctionalDataset,
                        conformal_pair, roo_conformal, split_conformal)
from safeglasso.conformal import roo_rank, split_indices, split_rank


class LinearInZ:
    """Least-squares line in ``z``: a cheap stand-in for the selection pipeline."""

    def __call__(self, ds):
        model = LinearInZ()
        A = np.column_stack([np.ones(ds.n), ds.z])
        model.coef = np.linalg.lstsq(A, ds.y, rcond=None)[0]
        return model

    def predict(self, ds):
        return self.coef[0] + self.coef[1] * ds.z


def make_ds(rng, n, noise=1.0):
    z = rng.uniform(-1, 1, n)
    y = 2.0 * z + noise * rng.normal(size=n)
    return FunctionalDataset(y, z, rng.normal(size=(1, n, 3)), np.linspace(0, 1, 3))


def test_ranks():
    assert split_rank(500, 0.2) == 201   # ceil(251 * 0.8) = ceil(200.8)
    assert split_rank(10, 0.5) == 3
    assert roo_rank(500, 0.2) == 200
    assert roo_rank(10, 0.5) == 3


@given(st.integers(4, 300), st.integers(0, 10_000))
def test_split_indices_partition(n, seed):
    i1, i2 = split_indices(n, seed)
    assert i1.size == (n + 1) // 2 and i2.size == n // 2
    assert np.array_equal(np.sort(np.concatenate([i1, i2])), np.arange(n))
    j1, j2 = split_indices(n, seed)
    assert np.array_equal(i1, j1) and np.array_equal(i2, j2)


def test_split_band_against_brute_force(rng):
    ds = make_ds(rng, 41)
    new = make_ds(rng, 7)
    alpha = 0.2
    band = split_conformal(ds, new, alpha, 3, LinearInZ())
    i1, i2 = split_indices(41, 3)
    model = LinearInZ()(ds.subset(i1))
    res = np.sort(np.abs(ds.y[i2] - model.predict(ds.subset(i2))))
    p = int(np.ceil((41 / 2 + 1) * 0.8))
    assert np.allclose(band.half_widths, res[p - 1])
    assert np.allclose(band.centers, model.predict(new))
    assert band.method == "split" and len(band) == 7
    assert np.allclose(band.upper - band.lower, 2 * res[p - 1])


def test_roo_band_against_brute_force(rng):
    n, alpha = 30, 0.3
    ds = make_ds(rng, n)
    band = roo_conformal(ds, alpha, 11, LinearInZ())
    i1, i2 = split_indices(n, 11)
    m = int(np.ceil(n / 2 * (1 - alpha)))
    for fit_idx, held in ((i1, i2), (i2, i1)):
        model = LinearInZ()(ds.subset(fit_idx))
        pred = model.predict(ds.subset(held))
        res = np.abs(ds.y[held] - pred)
        for j, i in enumerate(held):
            others = np.sort(np.delete(res, j))
            assert band.half_widths[i] == pytest.approx(others[m - 1], abs=1e-12)
            assert band.centers[i] == pytest.approx(pred[j], abs=1e-12)


def test_pair_matches_single_calls(rng):
    ds = make_ds(rng, 50)
    new = make_ds(rng, 9)
    out = conformal_pair(ds, new, [0.1, 0.3], 5, LinearInZ())
    for a in (0.1, 0.3):
        s = split_conformal(ds, new, a, 5, LinearInZ())
        r = roo_conformal(ds, a, 5, LinearInZ())
        assert np.array_equal(out[a]["split"].half_widths, s.half_widths)
        assert np.array_equal(out[a]["roo"].half_widths, r.half_widths)
        assert np.array_equal(out[a]["roo"].centers, r.centers)
    assert set(conformal_pair(ds, None, [0.2], 5, LinearInZ())[0.2]) == {"roo"}


def test_widths_monotone_in_alpha(rng):
    ds = make_ds(rng, 80)
    new = make_ds(rng, 5)
    alphas = [0.05, 0.1, 0.2, 0.4, 0.6]
    out = conformal_pair(ds, new, alphas, 0, LinearInZ())
    split_w = [out[a]["split"].half_widths[0] for a in alphas]
    roo_w = [out[a]["roo"].half_widths for a in alphas]
    assert all(a >= b for a, b in zip(split_w, split_w[1:]))
    assert all(np.all(a >= b) for a, b in zip(roo_w, roo_w[1:]))


def test_tied_residuals():
    n = 12
    z = np.linspace(-1, 1, n)
    y = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    ds = FunctionalDataset(y, z, np.zeros((1, n, 2)), [0.0, 1.0])

    class Zero:
        def __call__(self, d):
            return self

        def predict(self, d):
            return np.zeros(d.n)

    band = roo_conformal(ds, 0.4, 1, Zero())
    assert np.all(band.half_widths == 1.0)
    assert np.all(band.contains(y))


def test_finite_sample_coverage_of_split_band():
    # exchangeable data: the split band covers with probability >= 1 - alpha
    rng = np.random.default_rng(0)
    alpha, hits, reps = 0.2, 0, 400
    for seed in range(reps):
        ds = make_ds(rng, 40)
        new = make_ds(rng, 1)
        hits += int(split_conformal(ds, new, alpha, seed, LinearInZ()).contains(new.y)[0])
    cov = hits / reps
    se = np.sqrt(0.8 * 0.2 / reps)
    assert cov >= 1 - alpha - 3 * se


def test_infeasible_alpha_names_minimum(rng):
    ds = make_ds(rng, 20)
    with pytest.raises(ConfigurationError, match="minimum feasible alpha"):
        split_conformal(ds, ds, 0.01, 0, LinearInZ())
    with pytest.raises(ConfigurationError, match="minimum feasible alpha"):
        roo_conformal(ds, 0.01, 0, LinearInZ())


def test_invalid_arguments(rng):
    ds = make_ds(rng, 20)
    for alpha in (0.0, 1.0, -0.1):
        with pytest.raises(ConfigurationError):
            roo_conformal(ds, alpha, 0, LinearInZ())
    with pytest.raises(ConfigurationError):
        roo_conformal(make_ds(rng, 3), 0.5, 0, LinearInZ())


def test_band_validation():
    with pytest.raises(DataError):
        ConformalBand(np.zeros(3), np.zeros(2), 0.1, "split", 0)
    with pytest.raises(DataError):
        ConformalBand(np.zeros(2), -np.ones(2), 0.1, "split", 0)
    band = ConformalBand(np.zeros(2), np.ones(2), 0.1, "split", 0)
    with pytest.raises(DataError):
        band.contains(np.zeros(3))
    assert list(band.contains([1.0, 1.5])) == [True, False]


def test_determinism(rng):
    ds = make_ds(rng, 60)
    a = roo_conformal(ds, 0.2, 42, LinearInZ())
    b = roo_conformal(ds, 0.2, 42, LinearInZ())
    c = roo_conformal(ds, 0.2, 43, LinearInZ())
    assert np.array_equal(a.half_widths, b.half_widths)
    assert not np.array_equal(a.split[0], c.split[0])
