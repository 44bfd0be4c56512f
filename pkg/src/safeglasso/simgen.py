"""Synthetic data generators.

* :func:`gen_toy` - ten random sinusoidal predictors on ``[0, 1]`` of which the
  first two act through coefficient surfaces varying with ``z``.
* :func:`gen_correlated_noise` - Gaussian errors with a white-noise part plus a
  squared-exponential autocorrelated part.
* :func:`gen_mimic` - responses from user-supplied surfaces and an existing
  pool of functional predictors, with correlated errors.
* :func:`gen_emg_like` - a pool of smooth nonnegative signals and a position
  trace, windowed into recent-past curves, for trying :func:`gen_mimic`.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cholesky
from scipy.ndimage import gaussian_filter1d

from .design import FunctionalDataset, integrate_surfaces, window_history
from .errors import ConfigurationError, DataError, NumericalError

__all__ = [
    "ToyConfig",
    "NoiseConfig",
    "ToyTruth",
    "gen_toy",
    "toy_surfaces",
    "gen_toy_predictors",
    "gen_correlated_noise",
    "noise_covariance",
    "gen_mimic",
    "gen_emg_like",
    "mimic_surfaces",
    "THETA_REGIMES",
]

# white-noise dominated, balanced, dependence dominated
THETA_REGIMES = {"A1": 0.1, "A2": 1.0, "A3": 10.0}

MAX_DENSE_NOISE = 5000


@dataclass(frozen=True)
class ToyConfig:
    N: int = 500
    K: int = 10
    R: int = 100
    C: float = 0.0
    snr: float = 5.0
    seed: int = 0

    def validate(self):
        if min(self.N, self.K, self.R) < 1:
            raise ConfigurationError("N, K and R must be positive")
        if self.K < 2:
            raise ConfigurationError("the toy model needs K >= 2")
        if self.R < 2:
            raise ConfigurationError("the toy model needs R >= 2")
        if not self.snr > 0:
            raise ConfigurationError("snr must be positive")
        if self.C < 0:
            raise ConfigurationError("C must be nonnegative")


@dataclass(frozen=True)
class NoiseConfig:
    theta: float = 1.0
    kappa: float = 0.9
    sigma_h2: float = 1.0
    seed: int = 0

    def validate(self):
        if self.theta < 0:
            raise ConfigurationError("theta must be nonnegative")
        if not 0 < self.kappa < 1:
            raise ConfigurationError("kappa must lie in (0, 1)")
        if not self.sigma_h2 > 0:
            raise ConfigurationError("sigma_h2 must be positive")


@dataclass(frozen=True, eq=False)
class ToyTruth:
    active: tuple
    surfaces: dict
    sigma2: float
    mu: np.ndarray
    C: float

    @property
    def realized_snr(self):
        return float(np.var(self.mu) / self.sigma2)


def toy_surfaces(C, k_mult=1.0):
    """The two nonzero coefficient surfaces of the toy model (indices 0 and 1)."""
    r2 = np.sqrt(2.0)

    def gamma1(s, z):
        return 1.0 + r2 * C * z * k_mult + r2 * k_mult * np.cos(np.pi * s)

    def gamma2(s, z):
        return 1.0 + C * np.exp(-0.5 * z) + s + 0.5 * s**2

    return {0: gamma1, 1: gamma2}


def gen_toy_predictors(rng, K, N, s_grid, n_terms=5, target_sd=0.1):
    """Random sinusoid sums standardized to pointwise standard deviation ``target_sd``."""
    a = rng.uniform(0.0, 5.0, size=(K, N, n_terms))
    m = rng.uniform(0.0, 2.0 * np.pi, size=(K, N, n_terms))
    s = s_grid[None, None, None, :]
    raw = np.sum(a[..., None] * np.sin(2.0 * np.pi * s * (5.0 - a[..., None])) - m[..., None],
                 axis=2)
    sd = raw.std(axis=1, ddof=1, keepdims=True)
    return raw * (target_sd / sd)


def gen_toy(cfg):
    """Draw a toy dataset.

    Returns
    -------
    ds : FunctionalDataset
    truth : ToyTruth
        Active predictors ``(0, 1)`` (zero based), their surfaces, the error
        variance ``var(mu) / snr`` and the noiseless mean ``mu``.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    s_grid = np.linspace(0.0, 1.0, cfg.R)
    X = gen_toy_predictors(rng, cfg.K, cfg.N, s_grid)
    z = rng.uniform(-1.0, 1.0, size=cfg.N)
    surfaces = toy_surfaces(cfg.C)
    ds = FunctionalDataset(np.zeros(cfg.N), z, X, s_grid)
    mu = integrate_surfaces(ds, surfaces)
    sigma2 = float(np.var(mu) / cfg.snr)
    y = mu + rng.normal(0.0, np.sqrt(sigma2), size=cfg.N)
    truth = ToyTruth((0, 1), surfaces, sigma2, mu, float(cfg.C))
    return replace(ds, y=y), truth


def noise_covariance(n, theta, kappa, sigma_h2):
    """Covariance ``sigma_h2 * (1{i=j} + theta * exp(-(|i-j| / eta)^2))``, ``eta = 1/sqrt(-log kappa)``."""
    lag = np.abs(np.subtract.outer(np.arange(n), np.arange(n))).astype(float)
    eta = 1.0 / np.sqrt(-np.log(kappa))
    return sigma_h2 * (np.eye(n) + theta * np.exp(-((lag / eta) ** 2)))


def gen_correlated_noise(n, cfg, rng=None):
    """Draw one length-``n`` error vector with the stationary kernel of :func:`noise_covariance`."""
    cfg.validate()
    n = int(n)
    if n > MAX_DENSE_NOISE:
        raise ConfigurationError(f"n={n} exceeds the dense-Cholesky limit {MAX_DENSE_NOISE}")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    cov = noise_covariance(n, cfg.theta, cfg.kappa, cfg.sigma_h2)
    cov[np.diag_indices(n)] += 1e-10 * cfg.sigma_h2
    try:
        chol = cholesky(cov, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("noise covariance is not positive definite") from exc
    return chol @ rng.standard_normal(n)


def gen_mimic(surfaces, X_pool, noise, snr=None):
    """Responses generated from given surfaces on an existing predictor pool.

    Parameters
    ----------
    surfaces : dict
        ``{k: gamma_k(s, z)}`` for the active predictors (zero based).
    X_pool : FunctionalDataset
        Supplies ``X``, ``z`` and ``s_grid``; its ``y`` is ignored.
    noise : NoiseConfig
    snr : float, optional
        If given, ``sigma_h2`` is overridden so that the theoretical error
        variance ``sigma_h2 * (1 + theta)`` equals ``var(mu) / snr``.

    Returns
    -------
    ds : FunctionalDataset
    info : dict
        ``mu``, ``eps``, the noise config actually used and the realized
        ``var(mu) / var(eps)``.
    """
    for k in surfaces:
        if not 0 <= k < X_pool.k:
            raise DataError(f"surface index {k} outside 0..{X_pool.k - 1}")
    mu = integrate_surfaces(X_pool, surfaces)
    if snr is not None:
        if not snr > 0:
            raise ConfigurationError("snr must be positive")
        var_mu = float(np.var(mu))
        if var_mu == 0:
            raise DataError("cannot target an SNR when the signal is identically zero")
        noise = replace(noise, sigma_h2=var_mu / (snr * (1.0 + noise.theta)))
    eps = gen_correlated_noise(X_pool.n, noise)
    ds = replace(X_pool, y=mu + eps)
    info = {
        "mu": mu,
        "eps": eps,
        "noise": noise,
        "realized_snr": float(np.var(mu) / np.var(eps)),
    }
    return ds, info


def gen_emg_like(T=1500, K=16, delta=40, active=(4, 11), seed=0, names=None):
    """A synthetic stand-in for windowed EMG recordings.

    Signals are Gaussian-smoothed rectified noise bursts scaled into
    ``[0, 1]``.  The position trace is a sum of a few slow oscillations with
    random periods and phases, scaled so that it sweeps ``[-0.95, 0.95]``
    repeatedly, like cycles of flexion and extension.  The first ``active``
    signal also fires while the position rises, the second while it falls;
    the others are independent of it.  Returns the windowed dataset with a
    zero response.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(T, dtype=float)
    periods = rng.uniform(80.0, 250.0, size=3)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=3)
    pos = np.sum(np.sin(2.0 * np.pi * t[:, None] / periods + phases), axis=1)
    pos = 0.95 * (2.0 * (pos - pos.min()) / (pos.max() - pos.min()) - 1.0)
    vel = np.gradient(pos)
    vel /= np.max(np.abs(vel)) + 1e-12
    series = np.empty((T, K))
    for k in range(K):
        burst = np.abs(rng.standard_normal(T)) * (rng.uniform(size=T) < 0.2)
        sig = gaussian_filter1d(burst, rng.uniform(4.0, 10.0))
        if k in active:
            sign = 1.0 if k == active[0] else -1.0
            sig = sig + np.clip(sign * vel, 0.0, None) * sig.max()
        sig = sig - sig.min()
        series[:, k] = sig / (sig.max() + 1e-12)
    if names is None:
        names = tuple(f"emg{k + 1}" for k in range(K))
    return window_history(series, pos, np.zeros(T), delta, names=names)


def mimic_surfaces(delta, active=(4, 11)):
    """Two smooth, z-modulated history kernels on ``[-delta, 0] x [-1, 1]``.

    The first reacts positively to recent activity and more strongly at
    large ``z``; the second has opposite sign, a slower decay and the reverse
    z-trend.  Intended for :func:`gen_mimic` on :func:`gen_emg_like` pools.
    """
    scale = max(float(delta), 1.0) / 4.0

    def first(s, z):
        return (1.0 + 0.5 * z) * np.exp(s / scale)

    def second(s, z):
        return -(1.0 - 0.5 * z) * np.exp(s / (2.0 * scale)) * np.cos(np.pi * s / (2.0 * delta))

    return {active[0]: first, active[1]: second}
