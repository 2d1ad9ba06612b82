"""Coordinate-descent lasso on a precomputed Gram matrix and the coarse path.

All fits minimise ½‖y - Aβ‖² + λ‖β‖₁ and only touch AᵀA and Aᵀy, so refits for
many synthetic responses cost O(p · active sweeps).
"""

from dataclasses import dataclass

import numba
import numpy as np

DEFAULT_TOL = 1e-8
MAX_SWEEPS = 100_000
DEFAULT_L = 20
IOTA_FRAC = 1e-6
KKT_TOL = 1e-9


class LassoConvergenceError(RuntimeError):
    def __init__(self, msg, kkt_gap):
        super().__init__(f"{msg} (KKT gap {kkt_gap:.3e})")
        self.kkt_gap = kkt_gap


@numba.njit(cache=True, nogil=True)
def _sweep(G, lam, beta, grad, coords, n_coords):
    # one pass of soft-threshold updates; grad = g - G beta kept in sync.
    # G is symmetric, so row j is read instead of the strided column.
    max_upd = 0.0
    for k in range(n_coords):
        j = coords[k]
        gjj = G[j, j]
        if gjj <= 0.0:
            continue
        z = grad[j] + gjj * beta[j]
        if z > lam:
            new = (z - lam) / gjj
        elif z < -lam:
            new = (z + lam) / gjj
        else:
            new = 0.0
        d = new - beta[j]
        if d != 0.0:
            beta[j] = new
            for i in range(G.shape[0]):
                grad[i] -= G[j, i] * d
            ad = abs(d)
            if ad > max_upd:
                max_upd = ad
    return max_upd


@numba.njit(cache=True, nogil=True)
def _sweep_active(G, lam, beta, grad, active, na):
    # like _sweep but only keeps grad in sync on the active coordinates
    max_upd = 0.0
    for k in range(na):
        j = active[k]
        gjj = G[j, j]
        if gjj <= 0.0:
            continue
        z = grad[j] + gjj * beta[j]
        if z > lam:
            new = (z - lam) / gjj
        elif z < -lam:
            new = (z + lam) / gjj
        else:
            new = 0.0
        d = new - beta[j]
        if d != 0.0:
            beta[j] = new
            for t in range(na):
                i = active[t]
                grad[i] -= G[j, i] * d
            ad = abs(d)
            if ad > max_upd:
                max_upd = ad
    return max_upd


@numba.njit(cache=True, nogil=True)
def _refresh_grad(G, g, beta, grad):
    p = G.shape[0]
    for i in range(p):
        grad[i] = g[i]
    for j in range(p):
        bj = beta[j]
        if bj != 0.0:
            for i in range(p):
                grad[i] -= G[j, i] * bj


@numba.njit(cache=True, nogil=True)
def cd_gram(G, g, lam, beta, tol, max_sweeps):
    """Solve the lasso in place starting from `beta`.

    Full sweeps alternate with sweeps restricted to the current support; the
    latter only maintain the gradient on the support, and the full gradient
    is recomputed before the next full sweep.

    Returns (grad, sweeps, converged) where grad = g - G beta = Aᵀr.
    """
    p = G.shape[0]
    grad = np.empty(p)
    _refresh_grad(G, g, beta, grad)
    lam_max = 0.0
    for i in range(p):
        if abs(g[i]) > lam_max:
            lam_max = abs(g[i])
    thr = tol * lam_max
    all_coords = np.arange(p)
    active = np.empty(p, dtype=np.int64)
    sweeps = 0
    if lam_max == 0.0:
        beta[:] = 0.0
        return np.zeros(p), 0, True
    while sweeps < max_sweeps:
        upd = _sweep(G, lam, beta, grad, all_coords, p)
        sweeps += 1
        if upd < thr:
            return grad, sweeps, True
        na = 0
        for i in range(p):
            if beta[i] != 0.0:
                active[na] = i
                na += 1
        while sweeps < max_sweeps:
            upd = _sweep_active(G, lam, beta, grad, active, na)
            sweeps += 1
            if upd < thr:
                break
        _refresh_grad(G, g, beta, grad)
    return grad, sweeps, False


@numba.njit(cache=True, nogil=True)
def kkt_gap(grad, beta, lam):
    gap = 0.0
    for j in range(beta.shape[0]):
        if beta[j] != 0.0:
            v = abs(grad[j] - lam * np.sign(beta[j]))
        else:
            v = abs(grad[j]) - lam
        if v > gap:
            gap = v
    return gap


@numba.njit(cache=True, nogil=True)
def path_kernel(G, g, lam_min, L, tol, max_sweeps):
    """Coarse geometric path from λ_max to `lam_min` in L steps.

    Returns (lambdas[L+1], betas[L+1, p], entry[p], rho[p], lam_hat[p], ok).
    `entry` uses 1..L for grid entry and L+1 for never.
    """
    p = G.shape[0]
    lam_max = 0.0
    for i in range(p):
        if abs(g[i]) > lam_max:
            lam_max = abs(g[i])
    lambdas = np.empty(L + 1)
    betas = np.zeros((L + 1, p))
    grads = np.empty((L + 1, p))
    grads[0, :] = g
    entry = np.full(p, L + 1, dtype=np.int64)
    rho = np.zeros(p)
    lam_hat = np.zeros(p)
    if lam_max == 0.0:
        lambdas[:] = 0.0
        return lambdas, betas, entry, rho, lam_hat, True
    if lam_min > 0.5 * lam_max:
        lam_min = 0.5 * lam_max
    zeta = (lam_min / lam_max) ** (1.0 / L)
    lambdas[0] = lam_max
    for l in range(1, L + 1):
        lambdas[l] = lam_max * zeta**l
    lambdas[L] = lam_min
    beta = np.zeros(p)
    ok = True
    for l in range(1, L + 1):
        grad, _, conv = cd_gram(G, g, lambdas[l], beta, tol, max_sweeps)
        ok = ok and conv
        betas[l, :] = beta
        grads[l, :] = grad
        for j in range(p):
            if entry[j] == L + 1 and beta[j] != 0.0:
                entry[j] = l
    iota = IOTA_FRAC * lam_max
    for j in range(p):
        e = entry[j]
        lam_plus = lambdas[e - 1]
        rho[j] = abs(grads[e - 1, j])
        lam_e = lambdas[e] if e <= L else 0.0
        lam_hat[j] = max(rho[j] - iota, lam_e) + iota * rho[j] / lam_plus
    return lambdas, betas, entry, rho, lam_hat, ok


@dataclass
class LassoFit:
    lam: float
    beta: np.ndarray
    residual: np.ndarray
    iterations: int
    grad: np.ndarray = None
    kkt_gap: float = 0.0


@dataclass
class CoarsePath:
    lambdas: np.ndarray
    betas: np.ndarray
    entry_index: np.ndarray
    rho: np.ndarray
    lambda_hat: np.ndarray
    iota: float

    @property
    def L(self):
        return self.lambdas.size - 1

    @property
    def lambda_plus(self):
        return self.lambdas[self.entry_index - 1]


def lasso_gram(G, g, lam, warm_start=None, tol=DEFAULT_TOL, max_sweeps=MAX_SWEEPS, kkt_tol=None):
    """Lasso from Gram-side inputs. Returns (beta, grad, sweeps).

    The sweep criterion is relative to λ_max; with `kkt_tol` set the fit is
    re-run from its own warm start at tighter tolerances until the absolute
    KKT gap drops below it (or the tolerance hits machine precision).
    """
    G = np.ascontiguousarray(G, dtype=float)
    g = np.ascontiguousarray(g, dtype=float)
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    beta = np.zeros(g.size) if warm_start is None else np.array(warm_start, dtype=float)
    grad, sweeps, conv = cd_gram(G, g, float(lam), beta, float(tol), int(max_sweeps))
    if kkt_tol is not None:
        while conv and tol > 1e-15 and kkt_gap(grad, beta, lam) > kkt_tol:
            tol *= 1e-2
            grad, extra, conv = cd_gram(G, g, float(lam), beta, float(tol), int(max_sweeps))
            sweeps += extra
    if not conv:
        raise LassoConvergenceError(f"no convergence after {sweeps} sweeps", kkt_gap(grad, beta, lam))
    return beta, grad, sweeps


def lasso_fit(A, y, lam, warm_start=None, tol=DEFAULT_TOL, max_sweeps=MAX_SWEEPS, kkt_tol=KKT_TOL):
    """Fit the lasso of `y` on the columns of `A` at penalty `lam`.

    Parameters
    ----------
    A : ndarray (n, p)
    y : ndarray (n,)
    lam : float
    warm_start : ndarray (p,), optional
    kkt_tol : float or None
        Absolute KKT gap the returned fit must reach; None skips polishing.

    Returns
    -------
    LassoFit
    """
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float)
    beta, grad, sweeps = lasso_gram(A.T @ A, A.T @ y, lam, warm_start, tol, max_sweeps, kkt_tol)
    r = y - A @ beta
    return LassoFit(lam, beta, r, sweeps, grad, float(kkt_gap(grad, beta, lam)))


def coarse_path_gram(G, g, lam_min, L=DEFAULT_L, tol=DEFAULT_TOL, max_sweeps=MAX_SWEEPS):
    if L < 1:
        raise ValueError("L must be at least 1")
    G = np.ascontiguousarray(G, dtype=float)
    g = np.ascontiguousarray(g, dtype=float)
    lambdas, betas, entry, rho, lam_hat, ok = path_kernel(G, g, float(lam_min), int(L), float(tol), int(max_sweeps))
    if not ok:
        raise LassoConvergenceError("path fit did not converge", np.nan)
    iota = IOTA_FRAC * (lambdas[0] if lambdas.size else 0.0)
    return CoarsePath(lambdas, betas, entry, rho, lam_hat, iota)


def coarse_path(A, y, sigma_tilde=None, L=DEFAULT_L, lam_min=None, **kw):
    """Coarse path ending at 2σ̃ ∧ λ_max/2 (or at an explicit `lam_min`)."""
    A = np.asarray(A, dtype=float)
    if lam_min is None:
        if sigma_tilde is None or sigma_tilde <= 0:
            raise ValueError("need sigma_tilde > 0 or an explicit lam_min")
        lam_min = 2.0 * sigma_tilde
    return coarse_path_gram(A.T @ A, A.T @ np.asarray(y, dtype=float), lam_min, L, **kw)
