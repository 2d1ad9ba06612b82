"""Calibrated knockoffs: conditional calibration of a fallback test per hypothesis.

The engine works in Gram coordinates. For a conditional draw
z(η, u) = Π₋ⱼy + vⱼη + ζ·V_res·u (ζ = √(ρ² - η²)) we have

    X₊ᵀz = X₊ᵀΠ₋ⱼy + (X₊ᵀvⱼ)·η + ζ·[0; Bᵀu],   B = V_resᵀX̃,
    ‖P⊥_{X₊} z‖² = ζ²·(1 - ‖Oᵀu‖²),          O = basis of col(B),

so refitting the statistic for a synthetic response never touches n-vectors.
"""

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .confseq import EmpiricalBernsteinCS
from .knockoffs import build_knockoffs
from .lasso import DEFAULT_L, DEFAULT_TOL, MAX_SWEEPS, LassoConvergenceError, lasso_gram
from .linear_model import DesignFactors, bh_adjusted, ols_from_moments
from .sampling import (
    DEGENERATE_MASS,
    SamplingRegion,
    eta_cdf,
    eta_isf,
    eta_quantile,
    eta_sf,
    sample_strata,
    sphere,
)
from .seqstep import budgets, cmax_for, knockoff_reject, summary_kernel
from .statistics import KIND_CODE, break_ties, stat_kernel

log = logging.getLogger(__name__)


@dataclass
class CalibrationConfig:
    """Tuning knobs for cKnockoff / cKnockoff*.

    `lam` overrides the default penalty 2σ̃ (required when n = 2m).
    `cs_m_from_filter` replaces m by |S| in the CS level.
    """

    stat: str = "lcd-t"
    lam: float = None
    L: int = DEFAULT_L
    tol: float = DEFAULT_TOL
    alpha0_frac: float = 0.1
    truncation: int = 500
    truncation_rule: str = "mean"
    batch: int = 8
    k_nodes: int = 16
    refine: int = 512
    filter_s: float = 1.0
    cs_m_from_filter: bool = False
    degenerate_reject: bool = True
    seed: int = 0
    trial: int = 0
    n_jobs: int = 1
    k_cand: int = 3
    k_step: int = 3

    def rng(self, j, sub=0):
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.trial, j, sub))
        return np.random.default_rng(ss)


# ---------------------------------------------------------------- kernels


@numba.njit(cache=True, nogil=True)
def batch_kernel(kind, G, gbase, gv, BU, ou2, eta, rho, df2, lam_fixed, L, tol, max_sweeps,
                 beta_ws, alpha, cmax, j, t_center, vtx, a1, a2):
    """Evaluate the integrand ingredients on a batch of conditional draws.

    Returns arrays (f, num, n_rej, j_in, b, absW, w_star, T, ok).
    """
    k = eta.shape[0]
    p = G.shape[0]
    m = p // 2
    f = np.empty(k)
    num = np.empty(k)
    nrej = np.empty(k, dtype=np.int64)
    jin = np.empty(k, dtype=np.bool_)
    b = np.empty(k)
    absw = np.empty(k)
    wst = np.empty(k)
    T = np.empty(k)
    ok = True
    g = np.empty(p)
    for i in range(k):
        e = eta[i]
        zeta2 = rho * rho - e * e
        if zeta2 < 0.0:
            zeta2 = 0.0
        zeta = np.sqrt(zeta2)
        for q in range(p):
            g[q] = gbase[q] + gv[q] * e
        for q in range(m):
            g[m + q] += zeta * BU[i, q]
        if lam_fixed > 0.0:
            lam = lam_fixed
        else:
            s2 = zeta2 * max(1.0 - ou2[i], 0.0) / df2
            lam = 2.0 * np.sqrt(s2)
            gm = 0.0
            for q in range(p):
                if abs(g[q]) > gm:
                    gm = abs(g[q])
            if lam < 1e-12 * gm:
                lam = 1e-12 * gm
        beta = beta_ws.copy()
        W, conv = stat_kernel(kind, G, g, lam, beta, L, tol, max_sweeps)
        ok = ok and conv
        W = break_ties(W)
        nr, ji, bj, ws, aw = summary_kernel(W, alpha, cmax, j)
        tj = abs(t_center + vtx * e)
        big = e <= a1 or e >= a2
        nu = 1.0 if (ji or big) else 0.0
        den = nr if ji else nr + 1
        f[i] = nu / den - bj
        num[i] = nu
        nrej[i] = nr
        jin[i] = ji
        b[i] = bj
        absw[i] = aw
        wst[i] = ws
        T[i] = tj
    return f, num, nrej, jin, b, absw, wst, T, ok


# ---------------------------------------------------------------- engine


@dataclass
class Observation:
    """Everything computed from one response vector."""

    y: np.ndarray
    xty: np.ndarray
    rss: float
    sigma_tilde2: float
    lam: float
    W: np.ndarray
    beta: np.ndarray
    seqstep: object
    budget: object
    ols: object
    scores: np.ndarray = None
    filter_set: np.ndarray = None

    @property
    def rejections(self):
        return self.seqstep.rejections


@dataclass
class HypothesisContext:
    """Per-hypothesis quantities that are functions of Sⱼ (plus vⱼ, V_res)."""

    j: int
    rho: float
    df: int
    eta_obs: float
    vtx: float
    gbase: np.ndarray
    gv: np.ndarray
    proj_minus_y: np.ndarray
    v: np.ndarray
    lambda_j: float
    xj_yhat: float
    xj_proj: float
    c: float
    a1: float
    a2: float

    @property
    def t_center(self):
        return self.xj_proj - self.xj_yhat


@dataclass
class FallbackStatistic:
    value: float
    lambda_j: float
    yhat_j: np.ndarray


class Engine:
    """Response-free precomputation for one design, ensemble and level."""

    def __init__(self, X, alpha, config=None, ensemble=None):
        self.config = config or CalibrationConfig()
        self.alpha = float(alpha)
        self.cmax = cmax_for(alpha)
        self.ensemble = ensemble if ensemble is not None else build_knockoffs(np.asarray(X, dtype=float))
        ens = self.ensemble
        self.factors: DesignFactors = ens.factors
        self.X = self.factors.X
        self.n, self.m = self.X.shape
        self.G = np.ascontiguousarray(ens.gram_plus)
        self.B = np.ascontiguousarray(ens.B)
        self.O = np.ascontiguousarray(ens.O)
        self.df = self.n - self.m
        self.df2 = self.ensemble.resid_df if self.n >= 2 * self.m + 1 else 0
        self.kind = KIND_CODE[self.config.stat]
        if self.df2 <= 0 and self.config.lam is None:
            raise ValueError("n = 2m: σ̃ is unavailable, pass an explicit lam")

    # -- statistics ---------------------------------------------------
    def _lam(self, sig2):
        if self.config.lam is not None:
            return float(self.config.lam)
        return 2.0 * np.sqrt(sig2)

    def statistic(self, xty, sig2, warm_start=None):
        lam = self._lam(sig2)
        lam = max(lam, 1e-12 * np.max(np.abs(xty)), 1e-300)
        beta = np.zeros(2 * self.m) if warm_start is None else np.array(warm_start, dtype=float)
        W, ok = stat_kernel(self.kind, self.G, np.ascontiguousarray(xty), lam, beta,
                            self.config.L, self.config.tol, MAX_SWEEPS)
        if not ok:
            raise LassoConvergenceError("statistic fit did not converge", np.nan)
        return break_ties(W), beta, lam

    def observe(self, y, with_filter=True):
        y = np.asarray(y, dtype=float)
        xty = self.ensemble.X_plus.T @ y
        r = self.factors.V_res.T @ y
        rss = float(r @ r)
        if self.df2 > 0:
            rk = r - self.O @ (self.O.T @ r)
            sig2 = float(rk @ rk) / self.df2
        else:
            sig2 = float("nan")
        W, beta, lam = self.statistic(xty, sig2)
        seq = knockoff_reject(W, self.alpha)
        bud = budgets(W, self.alpha)
        ols = ols_from_moments(self.factors.gram_inv, xty[: self.m], rss, self.df)
        obs = Observation(y, xty, rss, sig2, lam, W, beta, seq, bud, ols)
        if with_filter:
            obs.scores = promising_scores(ols.p_values, W, seq, self.alpha)
            obs.filter_set = filter_from_scores(obs.scores, self.config.filter_s)
        return obs

    # -- per hypothesis -----------------------------------------------
    def hypothesis(self, obs, j):
        f = self.factors
        v = f.v(j)
        vtx = f.vtX(j)
        qy = f.Q.T @ obs.y
        eta = float(v @ obs.y)
        proj_minus_y = f.Q @ qy - eta * v
        rho = float(np.sqrt(max(obs.rss + eta * eta, 0.0)))
        gv = self.ensemble.X_plus.T @ v
        gbase = obs.xty - gv * eta
        lam_j, xj_yhat = self._fallback_fit(j, obs.xty[: self.m], rho)
        xj_proj = float(gbase[j])
        c = abs(xj_proj - xj_yhat + vtx * eta)
        a1 = (xj_yhat - xj_proj - c) / vtx
        a2 = (xj_yhat - xj_proj + c) / vtx
        return HypothesisContext(j, rho, self.df, eta, vtx, np.ascontiguousarray(gbase), np.ascontiguousarray(gv),
                                 proj_minus_y, v, lam_j, xj_yhat, xj_proj, c, a1, a2)

    def _fallback_fit(self, j, xty, rho):
        """λ⁽ʲ⁾ and Xⱼᵀŷ⁽ʲ⁾ for the lasso of y on X₋ⱼ (depends on y through Sⱼ only)."""
        lam_j = 2.0 * np.sqrt(rho * rho / (self.df + 1))
        keep = np.arange(self.m) != j
        S = self.factors.gram
        sub = np.ascontiguousarray(S[np.ix_(keep, keep)])
        g = np.ascontiguousarray(xty[keep])
        lam_eff = max(lam_j, 1e-12 * np.max(np.abs(g)) if g.size else 0.0)
        beta, _, _ = lasso_gram(sub, g, lam_eff, tol=self.config.tol)
        return lam_j, float(S[j, keep] @ beta)

    def evaluate(self, hc, obs, eta, U):
        """Run the integrand kernel for draws (eta, U) of hypothesis `hc`."""
        eta = np.ascontiguousarray(eta, dtype=float)
        BU = np.ascontiguousarray(U @ self.B)
        OU = U @ self.O
        ou2 = np.ascontiguousarray(np.einsum("ij,ij->i", OU, OU))
        lam_fixed = float(self.config.lam) if self.config.lam is not None else -1.0
        out = batch_kernel(self.kind, self.G, hc.gbase, hc.gv, BU, ou2, eta, hc.rho, float(max(self.df2, 1)),
                           lam_fixed, self.config.L, self.config.tol, MAX_SWEEPS, obs.beta, self.alpha,
                           self.cmax, hc.j, hc.t_center, hc.vtx, hc.a1, hc.a2)
        if not out[-1]:
            raise LassoConvergenceError("integrand refit did not converge", np.nan)
        keys = ("f", "num", "n_rej", "j_in", "b", "absW", "w_star", "T")
        return dict(zip(keys, out[:-1]))

    def assemble(self, hc, eta, U):
        eta = np.atleast_1d(eta)
        zeta = np.sqrt(np.maximum(hc.rho**2 - eta**2, 0.0))
        return hc.proj_minus_y[None, :] + eta[:, None] * hc.v[None, :] + zeta[:, None] * (np.atleast_2d(U) @ self.factors.V_res.T)


# ---------------------------------------------------------------- public ops


def fallback_statistic(decomposition, y=None, tol=DEFAULT_TOL):
    """Tⱼ = |Xⱼᵀ(y - ŷ⁽ʲ⁾)| with ŷ⁽ʲ⁾ the lasso of y on X₋ⱼ at λ⁽ʲ⁾ = 2σ̂⁽ʲ⁾."""
    dec = decomposition
    if y is None:
        y = dec.proj_minus_y + dec.eta_obs * dec.v_j
    lam_j = 2.0 * np.sqrt(dec.rho**2 / (dec.df + 1))
    A = dec.X_minus
    g = A.T @ dec.proj_minus_y  # equals X₋ⱼᵀy
    lam_eff = max(lam_j, 1e-12 * np.max(np.abs(g)))
    beta, _, _ = lasso_gram(A.T @ A, g, lam_eff, tol=tol)
    yhat = A @ beta
    return FallbackStatistic(float(abs(dec.X_j @ (y - yhat))), lam_j, yhat)


def omega_plus_bounds(decomposition, fallback, c=None):
    """(a1, a2) with {Tⱼ(z) ≥ c} = {η ∉ (a1, a2)}; c defaults to the observed Tⱼ."""
    dec = decomposition
    if c is None:
        c = fallback.value
    xj_yhat = float(dec.X_j @ fallback.yhat_j)
    xj_proj = float(dec.X_j @ dec.proj_minus_y)
    return (xj_yhat - xj_proj - c) / dec.vtX, (xj_yhat - xj_proj + c) / dec.vtX


def local_linear(x_nodes, y_nodes, x_eval, h):
    """Gaussian-kernel local linear regression evaluated at `x_eval`."""
    d = x_nodes[None, :] - x_eval[:, None]
    w = np.exp(-0.5 * (d / h) ** 2)
    s0 = w.sum(1)
    s1 = (w * d).sum(1)
    s2 = (w * d * d).sum(1)
    t0 = (w * y_nodes).sum(1)
    t1 = (w * d * y_nodes).sum(1)
    det = s0 * s2 - s1 * s1
    with np.errstate(divide="ignore", invalid="ignore"):
        est = (s2 * t0 - s1 * t1) / det
    # fall back to the local constant fit where the design is degenerate
    bad = ~np.isfinite(est) | (det <= 1e-12 * s0 * s2)
    est[bad] = t0[bad] / np.maximum(s0[bad], 1e-300)
    return est


def intervals_from_mask(grid, mask, lo, hi):
    if not mask.any():
        return []
    step = grid[1] - grid[0] if grid.size > 1 else 0.0
    edges = np.diff(np.concatenate([[0], mask.astype(np.int8), [0]]))
    starts = np.nonzero(edges == 1)[0]
    ends = np.nonzero(edges == -1)[0] - 1
    return [(max(lo, grid[s] - step / 2), min(hi, grid[e] + step / 2)) for s, e in zip(starts, ends)]


def omega_minus_estimate(evaluate_fn, rho, rng, df, k=16, refine=512):
    """Local-linear estimate of A⁻ = {η : E|Wⱼ| ≥ E w_{τ₁}}.

    Parameters
    ----------
    evaluate_fn : callable (eta, U) -> dict with "absW" and "w_star"
    rho : float
    rng : numpy Generator
    df : int
        n - m, the sphere dimension for u.
    """
    if k < 8:
        raise ValueError("need at least 8 nodes")
    if rho <= 0:
        return []
    step = 2.0 * rho / k
    nodes = -rho + step * (np.arange(k) + 0.5)
    U = sphere(rng, k, df)
    out = evaluate_fn(nodes, U)
    aw = np.asarray(out["absW"], dtype=float)
    ws = np.asarray(out["w_star"], dtype=float)
    if np.all(aw == 0):
        return []
    finite = np.isfinite(ws)
    if not finite.all():
        cap = 2.0 * max(aw.max(), ws[finite].max() if finite.any() else 0.0) + 1.0
        ws = np.where(finite, ws, cap)
    grid = np.linspace(-rho, rho, refine)
    w_hat = local_linear(nodes, aw, grid, step)
    t_hat = local_linear(nodes, ws, grid, step)
    return intervals_from_mask(grid, w_hat >= t_hat, -rho, rho)


def integrand(engine, hc, obs, eta, U):
    """fⱼ with its positive and negative parts for draws (η, u).

    f⁺ = 1{Tⱼ ≥ c}/|R^Kn ∪ {j}| and f⁻ = bⱼ - 1{j ∈ R^Kn, Tⱼ < c}/|R^Kn|, so
    f = f⁺ - f⁻.
    """
    ev = engine.evaluate(hc, obs, np.atleast_1d(eta), np.atleast_2d(U))
    big = (np.atleast_1d(eta) <= hc.a1) | (np.atleast_1d(eta) >= hc.a2)
    den = np.where(ev["j_in"], ev["n_rej"], ev["n_rej"] + 1)
    f_plus = big / den
    f_minus = f_plus - ev["f"]
    return ev["f"], f_plus, f_minus


@dataclass
class OnlineTestState:
    samples_seen: int = 0
    running_mean: float = float("nan")
    running_bound: float = float("inf")
    lower_bound: float = -float("inf")
    cs_level: float = 0.05
    truncation: int = 500
    decision: str = "inconclusive"
    truncated: bool = False
    degenerate: bool = False
    region_mass: float = float("nan")
    values: np.ndarray = field(default=None, repr=False)

    @property
    def estimate(self):
        """Ẽⱼ estimate: region mass times the sample mean."""
        if self.degenerate:
            return 0.0
        return self.region_mass * self.running_mean

    @property
    def rejected(self):
        return self.decision == "reject"


def test_Ej_leq_zero(draw_fn, cs_level, truncation=500, batch=8, lo=-1.0, hi=1.0, mass=1.0,
                     truncation_rule="mean", max_samples=None):
    """Sequential sign test of Ẽⱼ with an anytime-valid confidence sequence.

    Parameters
    ----------
    draw_fn : callable count -> array of integrand values
    cs_level : float
    truncation : int
        Sample cap after which the sign of the plain mean decides
        (``truncation_rule="mean"``); with ``"none"`` the test stops
        undecided at the cap.
    lo, hi : float
        Bounds on the integrand (−α and 1 for fⱼ).
    mass : float
        Q-mass of the sampling region; only rescales the reported estimate.
    """
    state = OnlineTestState(cs_level=cs_level, truncation=truncation, region_mass=mass)
    cs = EmpiricalBernsteinCS(cs_level, lo, hi)
    cap = truncation if max_samples is None else max_samples
    vals = []
    while state.samples_seen < cap:
        k = min(batch, cap - state.samples_seen)
        x = np.asarray(draw_fn(k), dtype=float)
        vals.append(x)
        cs.update(x)
        state.samples_seen += k
        state.running_mean = cs.mean
        state.running_bound = cs.upper
        state.lower_bound = cs.lower
        if cs.upper < 0:
            state.decision = "reject"
            break
        if cs.lower > 0:
            state.decision = "accept"
            break
    else:
        if truncation_rule == "mean":
            state.truncated = True
            state.decision = "reject" if state.running_mean <= 0 else "accept"
    state.values = np.concatenate(vals) if vals else np.zeros(0)
    return state


# ---------------------------------------------------------------- filtering


def _filter_thresholds(p_values, W, seqstep, alpha):
    """Per-j thresholds of the two membership branches as functions of s."""
    p = np.asarray(p_values, dtype=float)
    m = p.size
    s1 = np.maximum(2.0 * p / alpha, bh_adjusted(p) / (4.0 * alpha))
    a = np.abs(W)
    # rank r_j of |W_j| among |W| ascending (1-based); ties share the top rank
    srt = np.sort(a)
    r = np.searchsorted(srt, a, side="right")
    need = m - r  # |S^BH ∩ S^p| must reach this for |W_j| ≥ w_{m-N}
    s1_sorted = np.sort(s1)
    s2 = np.where(need <= 0, 0.0, s1_sorted[np.clip(need - 1, 0, m - 1)])
    w_tau = seqstep.w_hat
    s2 = np.where(a >= w_tau, 0.0, s2)
    return s1, s2


def promising_scores(p_values, W, seqstep, alpha):
    """s⁺ⱼ = min{s : j ∈ S(s)}, +∞ for knockoff rejections."""
    s1, s2 = _filter_thresholds(p_values, W, seqstep, alpha)
    s = np.minimum(s1, s2)
    s[seqstep.rejections] = np.inf
    return s


def filter_from_scores(scores, s=1.0):
    return np.nonzero(scores <= s)[0]


def filter_set(p_values, W, seqstep, alpha, s=1.0):
    """S = (S^BH ∩ S^p) ∪ S^Kn minus R^Kn, by the direct set formula."""
    p = np.asarray(p_values, dtype=float)
    m = p.size
    from .linear_model import bh_reject

    sbh = np.zeros(m, dtype=bool)
    sbh[bh_reject(p, 4 * s * alpha)] = True
    both = sbh & (p <= s * alpha / 2)
    nb = int(both.sum())
    a = np.abs(W)
    srt = np.sort(a)
    w_idx = m - nb  # 1-based order statistic index
    w_cut = srt[w_idx - 1] if w_idx >= 1 else 0.0
    kn = a >= min(w_cut, seqstep.w_hat)
    out = (both | kn)
    out[seqstep.rejections] = False
    return np.nonzero(out)[0]


# ---------------------------------------------------------------- procedure


@dataclass
class HypothesisResult:
    j: int
    decision: str
    rejected: bool
    samples_used: int
    truncated: bool
    degenerate: bool
    T: float
    estimate: float
    state: OnlineTestState = field(default=None, repr=False)
    hc: HypothesisContext = field(default=None, repr=False)
    draws: dict = field(default=None, repr=False)
    region: SamplingRegion = field(default=None, repr=False)
    error: str = None


def cs_level(config, alpha, n_rej, m, n_filter):
    alpha0 = config.alpha0_frac * alpha
    denom = n_filter if (config.cs_m_from_filter and n_filter > 0) else m
    return max(n_rej, 1) * alpha0 / denom


def run_fallback_test(engine, obs, j, config=None, keep_draws=False):
    """Conditional-calibration test of Ẽⱼ ≤ 0 for one hypothesis.

    A = Ω⁺ ∪ A⁻ is split into the strata Ω⁺ = (a1, a2)ᶜ (mass B⁺) and
    A⁻ ∩ (a1, a2) (mass M). Each Monte Carlo unit pairs one draw from each
    stratum and records Y = B⁺·f(z⁺) + M·f(z⁻), an unbiased and bounded
    estimate of Ẽⱼ. Plain sampling from A rarely lands in Ω⁺ when B⁺ is
    small, which makes the sign of the mean unreliable.
    """
    config = config or engine.config
    rng = config.rng(j)
    hc = engine.hypothesis(obs, j)
    evaluate = lambda eta, U: engine.evaluate(hc, obs, eta, U)  # noqa: E731
    A_minus = omega_minus_estimate(evaluate, hc.rho, rng, hc.df, config.k_nodes, config.refine)
    region = SamplingRegion(hc.a1, hc.a2, A_minus, hc.rho, hc.df)
    level = cs_level(config, engine.alpha, obs.rejections.size, engine.m, len(obs.filter_set))
    Bp, Mi = region.plus.mass, region.inner.mass
    if Bp + Mi < DEGENERATE_MASS:
        dec = "reject" if config.degenerate_reject else "accept"
        st = OnlineTestState(cs_level=level, decision=dec, degenerate=True, region_mass=region.mass,
                             values=np.zeros(0))
        return HypothesisResult(j, dec, dec == "reject", 0, False, True, hc.c, 0.0, st, hc, None, region)
    strata = [(s, w) for s, w in ((region.plus, Bp), (region.inner, Mi)) if w > 0]
    per_unit = len(strata)
    draws = {"eta": [], "U": [], "ev": [], "plus": []}

    def draw(k):
        eta = sample_strata(rng, [s for s, _ in strata], k)
        U = sphere(rng, eta.size, hc.df)
        ev = evaluate(eta, U)
        if keep_draws:
            draws["eta"].append(eta)
            draws["U"].append(U)
            draws["ev"].append(ev)
            draws["plus"].append(np.repeat([s is region.plus for s, _ in strata], k))
        return sum(w * ev["f"][i * k:(i + 1) * k] for i, (_, w) in enumerate(strata))

    units = max(config.truncation // per_unit, 1)
    batch = max(config.batch // per_unit, 1)
    st = test_Ej_leq_zero(draw, level, units, batch, -engine.alpha * (Bp + Mi), Bp if Bp > 0 else 0.0, 1.0,
                          config.truncation_rule)
    if keep_draws and draws["eta"]:
        merged = {"eta": np.concatenate(draws["eta"]), "U": np.vstack(draws["U"]),
                  "plus": np.concatenate(draws["plus"])}
        for key in draws["ev"][0]:
            merged[key] = np.concatenate([d[key] for d in draws["ev"]])
        n_units = st.samples_seen
        merged["weight"] = np.where(merged["plus"], Bp, Mi) / n_units
        draws = merged
    else:
        draws = None
    return HypothesisResult(j, st.decision, st.rejected, st.samples_seen * per_unit, st.truncated, False, hc.c,
                            st.estimate, st, hc, draws, region)


@dataclass
class RejectionReport:
    method: str
    alpha: float
    rejections: np.ndarray
    knockoff_rejections: np.ndarray
    records: list
    diagnostics: dict
    warnings: list = field(default_factory=list)
    filter_set: np.ndarray = None
    hypothesis_results: dict = field(default=None, repr=False)

    def to_dict(self):
        return {
            "method": self.method,
            "alpha": self.alpha,
            "rejections": [int(j) for j in self.rejections],
            "knockoff_rejections": [int(j) for j in self.knockoff_rejections],
            "filter_set": [] if self.filter_set is None else [int(j) for j in self.filter_set],
            "diagnostics": _jsonable(self.diagnostics),
            "hypotheses": _jsonable(self.records),
            "warnings": list(self.warnings),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else ("inf" if v > 0 else ("-inf" if v < 0 else "nan"))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _diagnostics(obs):
    return {
        "w_hat": obs.seqstep.w_hat,
        "tau": obs.seqstep.tau,
        "w_star": obs.budget.w_star,
        "tau_1": obs.budget.tau_1,
        "b": obs.budget.b,
        "b0": obs.budget.b0,
        "lambda": obs.lam,
        "sigma_tilde2": obs.sigma_tilde2,
    }


def _records(obs, names, results, rejected):
    recs = []
    kn = set(int(j) for j in obs.rejections)
    for j in range(obs.W.size):
        r = results.get(j)
        recs.append({
            "index": j,
            "name": names[j] if names is not None else f"X{j + 1}",
            "W": obs.W[j],
            "p_value": obs.ols.p_values[j],
            "T": None if r is None else r.T,
            "in_knockoff_set": j in kn,
            "fallback_decision": None if r is None else r.decision,
            "samples_used": 0 if r is None else r.samples_used,
            "truncated": False if r is None else r.truncated,
            "degenerate_region": False if r is None else r.degenerate,
            "rejected": j in rejected,
        })
    return recs


def calibrate(engine, obs, config=None, keep_draws=False):
    """Run fallback tests for every j in the filter set; returns {j: HypothesisResult}."""
    config = config or engine.config
    todo = [int(j) for j in obs.filter_set]
    warn = []

    def one(j):
        try:
            return run_fallback_test(engine, obs, j, config, keep_draws)
        except Exception as exc:  # a failed hypothesis is simply not rejected
            warn.append(f"hypothesis {j}: {exc}")
            return HypothesisResult(j, "error", False, 0, False, False, float("nan"), float("nan"), error=str(exc))

    if config.n_jobs > 1 and len(todo) > 1:
        with ThreadPoolExecutor(config.n_jobs) as ex:
            res = list(ex.map(one, todo))
    else:
        res = [one(j) for j in todo]
    return {r.j: r for r in res}, warn


def prepare(instance, config=None, engine=None):
    config = config or CalibrationConfig()
    if engine is None:
        engine = Engine(instance.X, instance.alpha, config)
    return engine, engine.observe(instance.y)


def cknockoff_reject(instance, config=None, engine=None):
    """R^cKn = R^Kn ∪ {j ∈ S : fallback test rejects}."""
    engine, obs = prepare(instance, config, engine)
    config = engine.config if config is None else config
    results, warn = calibrate(engine, obs, config)
    for w in warn:
        warnings.warn(w)
    extra = [j for j, r in results.items() if r.rejected]
    rej = np.union1d(obs.rejections, np.array(extra, dtype=int)).astype(int)
    recs = _records(obs, instance.names, results, set(rej.tolist()))
    return RejectionReport("cknockoff", instance.alpha, rej, obs.rejections.astype(int), recs, _diagnostics(obs),
                           warn, obs.filter_set, results)


def knockoff_report(instance, config=None, engine=None):
    engine, obs = prepare(instance, config, engine)
    recs = _records(obs, instance.names, {}, set(obs.rejections.tolist()))
    return RejectionReport("knockoff", instance.alpha, obs.rejections.astype(int), obs.rejections.astype(int), recs,
                           _diagnostics(obs), [], obs.filter_set, {})


# re-exported helpers used by the refinement module
__all__ = [
    "CalibrationConfig", "Engine", "Observation", "HypothesisContext", "FallbackStatistic", "OnlineTestState",
    "RejectionReport", "HypothesisResult", "fallback_statistic", "omega_plus_bounds", "omega_minus_estimate",
    "integrand", "test_Ej_leq_zero", "filter_set", "promising_scores", "cknockoff_reject", "knockoff_report",
    "run_fallback_test", "calibrate", "eta_cdf", "eta_sf", "eta_quantile", "eta_isf", "local_linear",
]
