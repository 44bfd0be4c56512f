"""Compiled inner loops for the exact block-majorization group lasso path.

Blocks are stored pre-rotated into the eigenbasis of their own Hessian
``2 W_k^T W_k = V diag(s) V^T`` as ``Wt[k] = (W_k V)^T`` of shape (G, N), so the
block subproblem::

    min_b ||r_k - W_k b||^2 + lam ||b||

becomes a diagonal one whose solution is ``b_j = c_j / (s_j + mu)`` with the
scalar ``mu`` fixed by ``mu * ||b|| = lam``.
"""

import numpy as np
from numba import njit

# relative slack in the zero-block test, so that lam = lambda_max gives an
# exact zero whatever the rounding of the two gradient computations
ZERO_MARGIN = 1.0 + 1e-12


@njit(cache=True)
def _secular(c, s, lam):
    G = c.size
    cn = 0.0
    smax = 0.0
    for j in range(G):
        cn += c[j] * c[j]
        if s[j] > smax:
            smax = s[j]
    cn = np.sqrt(cn)
    # -1 signals a zero block
    if smax <= 0.0 or cn <= lam * ZERO_MARGIN:
        return -1.0
    # root lies below this bound; Newton on the concave secular function
    # started from the right converges monotonically
    mu = lam * smax / (cn - lam)
    for _ in range(200):
        nb2 = 0.0
        t3 = 0.0
        for j in range(G):
            d = s[j] + mu
            v = c[j] / d
            nb2 += v * v
            t3 += v * v / d
        nb = np.sqrt(nb2)
        phi = 1.0 / nb - mu / lam
        dphi = t3 / (nb2 * nb) - 1.0 / lam
        if not (dphi < 0.0):
            break
        step = phi / dphi
        mu_new = mu - step
        if not (mu_new > 0.0):
            mu_new = 0.5 * mu
        if abs(mu_new - mu) <= 1e-14 * mu:
            mu = mu_new
            break
        mu = mu_new
    return mu


@njit(cache=True)
def _update(k, Wt, S, theta, r, lam, c):
    G = Wt.shape[1]
    N = Wt.shape[2]
    cn2 = 0.0
    for j in range(G):
        acc = 0.0
        for i in range(N):
            acc += Wt[k, j, i] * r[i]
        c[j] = 2.0 * acc + S[k, j] * theta[k, j]
        cn2 += c[j] * c[j]
    was_zero = True
    for j in range(G):
        if theta[k, j] != 0.0:
            was_zero = False
            break
    if np.sqrt(cn2) <= lam:
        if was_zero:
            return 0.0
        for j in range(G):
            c[j] = 0.0
    else:
        mu = _secular(c, S[k], lam)
        if mu < 0.0:
            for j in range(G):
                c[j] = 0.0
        else:
            for j in range(G):
                c[j] = c[j] / (S[k, j] + mu)
    change = 0.0
    for j in range(G):
        d = c[j] - theta[k, j]
        if d != 0.0:
            if abs(d) > change:
                change = abs(d)
            for i in range(N):
                r[i] -= d * Wt[k, j, i]
            theta[k, j] = c[j]
    return change


@njit(cache=True)
def _norm2(theta):
    acc = 0.0
    for k in range(theta.shape[0]):
        for j in range(theta.shape[1]):
            acc += theta[k, j] * theta[k, j]
    return np.sqrt(acc)


@njit(cache=True)
def _cross(H, have, Wt, k, j):
    if not have[k, j]:
        blk = np.dot(Wt[k], Wt[j].T)
        H[k, j] = blk
        H[j, k] = blk.T
        have[k, j] = True
        have[j, k] = True


@njit(cache=True)
def _gram_update(k, H, have, Wt, q, S, theta, nz, lam, c):
    """Block update from cross-products ``Wt[k] @ Wt[j].T`` with nonzero groups."""
    K, G = theta.shape
    for j in range(G):
        c[j] = q[k, j]
    for kk in range(K):
        if kk == k or not nz[kk]:
            continue
        _cross(H, have, Wt, k, kk)
        for j in range(G):
            acc = 0.0
            for h in range(G):
                acc += H[k, kk, j, h] * theta[kk, h]
            c[j] -= acc
    cn2 = 0.0
    for j in range(G):
        c[j] = 2.0 * c[j]
        cn2 += c[j] * c[j]
    if np.sqrt(cn2) <= lam:
        if not nz[k]:
            return 0.0
        for j in range(G):
            c[j] = 0.0
        nz[k] = False
    else:
        mu = _secular(c, S[k], lam)
        if mu < 0.0:
            for j in range(G):
                c[j] = 0.0
            nz[k] = False
        else:
            for j in range(G):
                c[j] = c[j] / (S[k, j] + mu)
            nz[k] = True
    change = 0.0
    for j in range(G):
        d = abs(c[j] - theta[k, j])
        if d > change:
            change = d
        theta[k, j] = c[j]
    return change


@njit(cache=True)
def _gram_path(Wt, S, y, lams, tol, max_iter, theta):
    K, G, N = Wt.shape
    n_lam = lams.size
    q = np.zeros((K, G))
    for k in range(K):
        for j in range(G):
            acc = 0.0
            for i in range(N):
                acc += Wt[k, j, i] * y[i]
            q[k, j] = acc
    H = np.empty((K, K, G, G))
    have = np.zeros((K, K), dtype=np.bool_)
    nz = np.zeros(K, dtype=np.bool_)
    for k in range(K):
        for j in range(G):
            if theta[k, j] != 0.0:
                nz[k] = True
                break
    out = np.zeros((n_lam, K, G))
    iters = np.zeros(n_lam, dtype=np.int64)
    conv = np.zeros(n_lam, dtype=np.bool_)
    c = np.empty(G)
    active = np.empty(K, dtype=np.int64)
    for li in range(n_lam):
        lam = lams[li]
        it = 0
        while it < max_iter:
            change = 0.0
            for k in range(K):
                ch = _gram_update(k, H, have, Wt, q, S, theta, nz, lam, c)
                if ch > change:
                    change = ch
            it += 1
            if change <= tol * (1.0 + _norm2(theta)):
                conv[li] = True
                break
            n_act = 0
            for k in range(K):
                if nz[k]:
                    active[n_act] = k
                    n_act += 1
            while it < max_iter:
                change = 0.0
                for a in range(n_act):
                    ch = _gram_update(active[a], H, have, Wt, q, S, theta, nz, lam, c)
                    if ch > change:
                        change = ch
                it += 1
                if change <= tol * (1.0 + _norm2(theta)):
                    break
        iters[li] = it
        out[li] = theta
    return out, iters, conv


@njit(cache=True)
def _residual_path(Wt, S, y, lams, tol, max_iter, theta):
    K, G, N = Wt.shape
    n_lam = lams.size
    r = y.copy()
    for k in range(K):
        for j in range(G):
            if theta[k, j] != 0.0:
                for i in range(N):
                    r[i] -= theta[k, j] * Wt[k, j, i]
    out = np.zeros((n_lam, K, G))
    iters = np.zeros(n_lam, dtype=np.int64)
    conv = np.zeros(n_lam, dtype=np.bool_)
    c = np.empty(G)
    active = np.empty(K, dtype=np.int64)
    for li in range(n_lam):
        lam = lams[li]
        it = 0
        while it < max_iter:
            change = 0.0
            for k in range(K):
                ch = _update(k, Wt, S, theta, r, lam, c)
                if ch > change:
                    change = ch
            it += 1
            if change <= tol * (1.0 + _norm2(theta)):
                conv[li] = True
                break
            n_act = 0
            for k in range(K):
                for j in range(G):
                    if theta[k, j] != 0.0:
                        active[n_act] = k
                        n_act += 1
                        break
            while it < max_iter:
                change = 0.0
                for a in range(n_act):
                    ch = _update(active[a], Wt, S, theta, r, lam, c)
                    if ch > change:
                        change = ch
                it += 1
                if change <= tol * (1.0 + _norm2(theta)):
                    break
        iters[li] = it
        out[li] = theta
    return out, iters, conv


# cross-product cache budget for the Gram variant
GRAM_BYTES = 512 * 2**20


def exact_block_path(Wt, S, y, lams, tol, max_iter, theta0, gram=None):
    """Warm-started path; returns (thetas, iterations, converged).

    Each grid point alternates a sweep over all groups with sweeps over the
    nonzero groups until those settle; it is converged once a full sweep moves
    no coordinate by more than ``tol * (1 + ||theta||)``.  The Gram variant
    works from lazily cached cross-products ``Wt[k] @ Wt[j].T`` and is used
    whenever the cache fits in ``GRAM_BYTES``.
    """
    K, G, _ = Wt.shape
    if gram is None:
        gram = 8 * K * K * G * G <= GRAM_BYTES
    theta = np.array(theta0, dtype=np.float64, copy=True)
    args = (np.ascontiguousarray(Wt, dtype=np.float64), np.ascontiguousarray(S, dtype=np.float64),
            np.ascontiguousarray(y, dtype=np.float64), np.ascontiguousarray(lams, dtype=np.float64),
            float(tol), int(max_iter), theta)
    return _gram_path(*args) if gram else _residual_path(*args)
