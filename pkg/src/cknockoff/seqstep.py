"""Selective SeqStep thresholding and the early-stopped calibration budgets."""

import math
from dataclasses import dataclass

import numba
import numpy as np


def cmax_for(alpha):
    """Largest |C| that still counts as |C| < 1/α, i.e. ⌈1/α⌉ - 1.

    1/α is rounded to 9 decimals first so that levels like 0.05 do not pick
    up a spurious ulp and jump the ceiling.
    """
    return int(math.ceil(round(1.0 / alpha, 9))) - 1


@numba.njit(cache=True, nogil=True)
def seqstep_kernel(W, alpha, cmax):
    """Scan the order statistics of the nonzero |W|.

    Returns
    -------
    thresholds : sorted nonzero |W| (w_1 < ... < w_T)
    fdp : FDP-hat at each w_t
    csize, asize : |C(w_t)|, |A(w_t)|
    tau, tau1 : 1-based stopping indices in 1..T+1
    """
    m = W.shape[0]
    a = np.abs(W)
    nz = 0
    for i in range(m):
        if a[i] > 0.0:
            nz += 1
    idx = np.empty(nz, dtype=np.int64)
    k = 0
    for i in range(m):
        if a[i] > 0.0:
            idx[k] = i
            k += 1
    order = idx[np.argsort(a[idx], kind="mergesort")]
    T = nz
    thresholds = np.empty(T)
    csize = np.zeros(T, dtype=np.int64)
    asize = np.zeros(T, dtype=np.int64)
    pos = 0
    neg = 0
    # suffix counts, walking down from the largest |W|
    t = T - 1
    while t >= 0:
        v = a[order[t]]
        s = t
        while s >= 0 and a[order[s]] == v:
            if W[order[s]] > 0:
                pos += 1
            else:
                neg += 1
            s -= 1
        for u in range(s + 1, t + 1):
            thresholds[u] = v
            csize[u] = pos
            asize[u] = neg
        t = s
    fdp = np.empty(T)
    tau = T + 1
    tau1 = T + 1
    for t in range(T):
        if csize[t] > 0:
            fdp[t] = (1.0 + asize[t]) / csize[t]
        else:
            fdp[t] = np.inf
        if tau == T + 1 and fdp[t] <= alpha:
            tau = t + 1
        if tau1 == T + 1 and csize[t] <= cmax:
            tau1 = t + 1
    if tau < tau1:
        tau1 = tau
    return thresholds, fdp, csize, asize, tau, tau1


@numba.njit(cache=True, nogil=True)
def summary_kernel(W, alpha, cmax, j):
    """Quantities the calibration integrand needs for hypothesis `j`.

    Returns (n_rej, j_in_rej, b_j, w_star, absW_j).
    """
    thresholds, fdp, csize, asize, tau, tau1 = seqstep_kernel(W, alpha, cmax)
    T = thresholds.shape[0]
    n_rej = 0
    w_hat = np.inf
    if tau <= T:
        w_hat = thresholds[tau - 1]
        n_rej = csize[tau - 1]
    w_star = np.inf
    b = 0.0
    if tau1 <= T:
        w_star = thresholds[tau1 - 1]
        if W[j] >= w_star:
            b = alpha / (1.0 + asize[tau1 - 1])
    return n_rej, W[j] >= w_hat, b, w_star, abs(W[j])


@dataclass
class SeqStepResult:
    w_hat: float
    tau: int
    rejections: np.ndarray
    fdp_hat_trace: np.ndarray
    thresholds: np.ndarray
    csize: np.ndarray
    asize: np.ndarray


@dataclass
class BudgetResult:
    w_star: float
    tau_1: int
    b: np.ndarray
    b0: np.ndarray


def fdp_hat(W, w):
    """(1 + #{Wⱼ ≤ -w}) / #{Wⱼ ≥ w}; +∞ when the candidate set is empty, 0 at w = ∞."""
    W = np.asarray(W, dtype=float)
    if w < 0:
        raise ValueError("threshold must be nonnegative")
    if np.isinf(w):
        return 0.0
    c = np.count_nonzero(W >= w)
    if c == 0:
        return np.inf
    return (1.0 + np.count_nonzero(W <= -w)) / c


def _scan(W, alpha):
    W = np.ascontiguousarray(W, dtype=float)
    return seqstep_kernel(W, float(alpha), cmax_for(alpha))


def knockoff_reject(W, alpha):
    """Knockoff rejection set {Wⱼ ≥ ŵ} with ŵ the first order statistic where FDP-hat ≤ α."""
    W = np.asarray(W, dtype=float)
    thr, fdp, cs, as_, tau, _ = _scan(W, alpha)
    w_hat = thr[tau - 1] if tau <= thr.size else np.inf
    rej = np.nonzero(W >= w_hat)[0] if np.isfinite(w_hat) else np.array([], dtype=int)
    return SeqStepResult(w_hat, int(tau), rej, fdp, thr, cs, as_)


def budgets(W, alpha):
    """Budgets bⱼ = α·1{j ∈ C(w*)}/(1 + |A(w*)|) with w* = w_{τ₁}.

    Also returns the un-stopped b⁰ (same formula at ŵ) for diagnostics.
    """
    W = np.asarray(W, dtype=float)
    thr, fdp, cs, as_, tau, tau1 = _scan(W, alpha)
    T = thr.size

    def at(t):
        if t > T:
            return np.inf, np.zeros(W.size)
        w = thr[t - 1]
        return w, np.where(W >= w, alpha / (1.0 + as_[t - 1]), 0.0)

    w_star, b = at(tau1)
    _, b0 = at(tau)
    return BudgetResult(w_star, int(tau1), b, b0)


def supermartingale_trace(W, null_mask):
    """M_t = |C(w_t) ∩ H₀| / (1 + |A(w_t) ∩ H₀|) for t = 1..T+1."""
    W = np.asarray(W, dtype=float)
    null = np.asarray(null_mask, dtype=bool)
    a = np.abs(W)
    thr = np.sort(a[a > 0])
    out = np.empty(thr.size + 1)
    for t, w in enumerate(thr):
        c = np.count_nonzero(null & (W >= w))
        n = np.count_nonzero(null & (W <= -w))
        out[t] = c / (1.0 + n)
    out[-1] = 0.0
    return out
