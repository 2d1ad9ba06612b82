"""Knockoff feature statistics computed from Gram-side inputs.

Every statistic depends on the data only through X₊ᵀX₊, X₊ᵀy and (for the
default penalties) σ̃, which is what lets the calibration step refit them
cheaply for synthetic responses.
"""

import math
from dataclasses import dataclass

import numba
import numpy as np

from .lasso import DEFAULT_L, DEFAULT_TOL, MAX_SWEEPS, LassoConvergenceError, cd_gram, path_kernel

KINDS = ("lcd", "lcd-t", "lsm", "c-lsm")
KIND_CODE = {k: i for i, k in enumerate(KINDS)}


@dataclass
class FeatureStatistics:
    kind: str
    W: np.ndarray
    lambda_used: float = float("nan")
    beta: np.ndarray = None


@numba.njit(cache=True, nogil=True)
def _hash_index(j):
    return (j * 2654435761) % 4294967296


@numba.njit(cache=True, nogil=True)
def _ulp(v):
    _, e = math.frexp(v)
    return math.ldexp(1.0, e - 53)


@numba.njit(cache=True, nogil=True)
def break_ties(W):
    """Separate exact ties among nonzero |Wⱼ| by a few ulps.

    The k-th member of a tied group (ordered by a fixed hash of the index) is
    moved k ulps away from zero, so signs are kept, no non-tied comparison
    changes and the shift stays far below 1e-12 for |W| < 1e3.
    """
    out = W.copy()
    m = W.shape[0]
    a = np.abs(W)
    order = np.argsort(a, kind="mergesort")
    i = 0
    while i < m:
        v = a[order[i]]
        k = i + 1
        while k < m and a[order[k]] == v:
            k += 1
        if k - i > 1 and v > 0.0:
            nxt = a[order[k]] if k < m else np.inf
            grp = order[i:k].copy()
            keys = np.empty(k - i, dtype=np.int64)
            for t in range(k - i):
                keys[t] = _hash_index(grp[t])
            grp = grp[np.argsort(keys, kind="mergesort")]
            u = _ulp(v)
            if v + (k - i) * u < nxt:
                for t in range(1, k - i):
                    jj = grp[t]
                    mag = v + t * u
                    out[jj] = mag if W[jj] > 0 else -mag
        i = k
    return out


@numba.njit(cache=True, nogil=True)
def _lcd_from_fit(beta, grad, lam, m, tiebreak):
    W = np.empty(m)
    for j in range(m):
        d = abs(beta[j]) - abs(beta[j + m])
        if tiebreak:
            if d != 0.0:
                d = d + 2.0 * lam * np.sign(d)
            else:
                d = abs(grad[j]) - abs(grad[j + m])
        W[j] = d
    return W


@numba.njit(cache=True, nogil=True)
def _signed_max(a, m):
    W = np.empty(m)
    for j in range(m):
        x, y = a[j], a[j + m]
        W[j] = max(x, y) * np.sign(x - y)
    return W


@numba.njit(cache=True, nogil=True)
def stat_kernel(kind, G, g, lam, beta, L, tol, max_sweeps):
    """W for statistic `kind` (0 lcd, 1 lcd-t, 2 lsm, 3 c-lsm), ties untouched.

    For the lasso kinds `lam` is the penalty and `beta` a warm start updated in
    place; for the path kinds `lam` is the smallest grid value.
    """
    m = G.shape[0] // 2
    if kind <= 1:
        grad, _, ok = cd_gram(G, g, lam, beta, tol, max_sweeps)
        return _lcd_from_fit(beta, grad, lam, m, kind == 1), ok
    lambdas, betas, entry, rho, lam_hat, ok = path_kernel(G, g, lam, L, tol, max_sweeps)
    if kind == 3:
        return _signed_max(lam_hat, m), ok
    lstar = np.zeros(2 * m)
    for i in range(2 * m):
        if entry[i] <= L:
            lstar[i] = rho[i]
    return _signed_max(lstar, m), ok


def _run(kind, G, g, lam, warm_start, L, tol, max_sweeps):
    G = np.ascontiguousarray(G, dtype=float)
    g = np.ascontiguousarray(g, dtype=float)
    if G.shape[0] % 2 or G.shape != (g.size, g.size):
        raise ValueError("expected an augmented 2m x 2m Gram and matching X₊ᵀy")
    beta = np.zeros(g.size) if warm_start is None else np.array(warm_start, dtype=float)
    W, ok = stat_kernel(KIND_CODE[kind], G, g, float(lam), beta, int(L), float(tol), int(max_sweeps))
    if not ok:
        raise LassoConvergenceError(f"{kind} statistic: lasso did not converge", np.nan)
    return W, beta


def lcd(gram, xty, lam, warm_start=None, tol=DEFAULT_TOL, max_sweeps=MAX_SWEEPS):
    """Lasso coefficient difference |β̂ⱼ| - |β̂ⱼ₊ₘ|."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    W, beta = _run("lcd", gram, xty, lam, warm_start, 1, tol, max_sweeps)
    return FeatureStatistics("lcd", W, float(lam), beta)


def lcd_t(gram, xty, lam, warm_start=None, tol=DEFAULT_TOL, max_sweeps=MAX_SWEEPS):
    """LCD with the residual-correlation tiebreaker.

    Nonzero LCD values are pushed out by 2λ; exact zeros fall back to
    |Xⱼᵀr| - |X̃ⱼᵀr|, which KKT keeps inside [-λ, λ].
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    W, beta = _run("lcd-t", gram, xty, lam, warm_start, 1, tol, max_sweeps)
    return FeatureStatistics("lcd-t", W, float(lam), beta)


def lsm(path):
    """Signed max of entry points, with entries read off the coarse path.

    A column entering on the grid is assigned ρⱼ, its residual correlation at
    the last grid value before entry; one that never enters gets 0.
    """
    L = path.L
    lstar = np.where(path.entry_index <= L, path.rho, 0.0)
    m = lstar.size // 2
    return FeatureStatistics("lsm", _signed_max(lstar, m))


def clsm(path):
    m = path.lambda_hat.size // 2
    return FeatureStatistics("c-lsm", _signed_max(path.lambda_hat, m))


def feature_statistics(kind, gram, xty, lam, warm_start=None, L=DEFAULT_L, tol=DEFAULT_TOL, tiebreak=True):
    """Dispatch on `kind`; `lam` is the penalty (lcd kinds) or path end (lsm kinds)."""
    if kind not in KIND_CODE:
        raise ValueError(f"unknown statistic {kind!r}; choose from {KINDS}")
    if lam <= 0:
        raise ValueError("lambda must be positive")
    W, beta = _run(kind, gram, xty, lam, warm_start, L, tol, MAX_SWEEPS)
    if tiebreak:
        W = break_ties(W)
    return FeatureStatistics(kind, W, float(lam), beta)
