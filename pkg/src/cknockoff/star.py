"""cKnockoff*: a cheap intermediate rejection set R* and the refined denominators."""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .calibration import (
    CalibrationConfig,
    RejectionReport,
    _diagnostics,
    _records,
    calibrate,
    prepare,
)
from .sampling import eta_cdf, eta_isf, eta_quantile, eta_sf, sphere

MEMBER_RTOL = 1e-12


@dataclass
class StarConfig:
    k_cand: int = 3
    k_step: int = 3


def p_gate(alpha, m, cmax):
    return min(alpha / m, 0.01 * alpha / cmax)


def star_candidate_set(scores, p_values, filter_S, alpha, k_cand=3, cmax=None):
    """S* = the `k_cand` best-scored members of S whose p-value passes the gate.

    Ties in the score are broken by index.
    """
    from .seqstep import cmax_for

    p = np.asarray(p_values, dtype=float)
    cmax = cmax_for(alpha) if cmax is None else cmax
    gate = p_gate(alpha, p.size, cmax)
    cand = [int(j) for j in filter_S if p[j] <= gate]
    cand.sort(key=lambda j: (scores[j], j))
    return np.array(sorted(cand[:k_cand]), dtype=int)


def _shift(x, delta, rho, df):
    """Move η = x by Q-mass `delta` (positive = upward), working on the accurate side."""
    if x >= 0:
        return float(eta_isf(float(eta_sf(x, rho, df)) - delta, rho, df))
    return float(eta_quantile(float(eta_cdf(x, rho, df)) + delta, rho, df))


@dataclass
class MembershipResult:
    member: bool
    B_plus: float
    h: float
    nodes: list = field(default_factory=list)
    partial_sums: list = field(default_factory=list)
    exhausted: bool = False


def rstar_membership(engine, obs, hc, rng, k_step=3, f_override=None):
    """Fast sufficient check of Eⱼ ≤ 0 by a K^step-node left Riemann sum.

    Nodes march from the observed boundary point into (a1, a2) in steps of
    Q-mass h = B⁺/(α/⌈1/α - 1⌉). `f_override` (callable η -> f) replaces the
    integrand, for testing.
    """
    alpha, cmax = engine.alpha, engine.cmax
    rho, df = hc.rho, hc.df
    B_plus = float(eta_cdf(hc.a1, rho, df) + eta_sf(hc.a2, rho, df))
    h = B_plus / (alpha / cmax)
    res = MembershipResult(False, B_plus, h)
    if B_plus <= 0:
        return res
    upward = abs(hc.eta_obs - hc.a1) <= abs(hc.eta_obs - hc.a2)
    inner = 1.0 - B_plus
    total = 0.0
    for i in range(1, k_step + 1):
        if i * h > inner:
            res.exhausted = True
            break
        x = _shift(hc.eta_obs, i * h if upward else -i * h, rho, df)
        x = min(max(x, hc.a1), hc.a2)
        if f_override is not None:
            f = float(f_override(x))
        else:
            U = sphere(rng, 1, df)
            f = float(engine.evaluate(hc, obs, np.array([x]), U)["f"][0])
        total += f * h
        res.nodes.append(x)
        res.partial_sums.append(total)
        if total <= -B_plus * (1 - MEMBER_RTOL):
            res.member = True
            break
    return res


def rstar_set(engine, obs, config, rng):
    """R*(y) = R^Kn ∪ {j ∈ S* : fast membership check passes}."""
    cand = star_candidate_set(obs.scores, obs.ols.p_values, obs.filter_set, engine.alpha, config.k_cand, engine.cmax)
    members = []
    for j in cand:
        hc = engine.hypothesis(obs, int(j))
        if rstar_membership(engine, obs, hc, rng, config.k_step).member:
            members.append(int(j))
    return np.union1d(obs.rejections, np.array(members, dtype=int)).astype(int)


def solve_min_denominator(f, b, in_I, weight=None):
    """Smallest common denominator R with Σ wᵢfᵢ ≤ 0 once Ī samples use 1/R - bᵢ.

    Equal weights give the plain-mean version. Returns +inf when no
    denominator suffices.
    """
    f = np.asarray(f, dtype=float)
    b = np.asarray(b, dtype=float)
    in_I = np.asarray(in_I, dtype=bool)
    w = np.ones_like(f) if weight is None else np.asarray(weight, dtype=float)
    wI = float(np.sum(w[in_I]))
    if wI <= 0:
        return np.inf
    slack = float(np.sum(w[in_I] * b[in_I]) - np.sum(w[~in_I] * f[~in_I]))
    if slack <= 0:
        return np.inf
    return float(np.ceil(wI / slack - 1e-12))


def refine_decision(engine, obs, res, config, rng, trim_first=3):
    """Star refinement of one non-rejected fallback test.

    Returns (rejected, info dict).
    """
    d = res.draws
    info = {"I_size": 0, "R_needed": None, "evaluated": 0, "trimmed": False}
    if d is None or d["f"].size == 0:
        return False, info
    f = d["f"].copy()
    ratio_one = (d["num"] == 1) & (d["n_rej"] == 0)
    big = (d["eta"] <= res.hc.a1) | (d["eta"] >= res.hc.a2)
    in_I = ratio_one & big
    info["I_size"] = int(in_I.sum())
    w = d.get("weight", np.full(f.size, 1.0 / f.size))
    R_need = solve_min_denominator(f, d["b"], in_I, w)
    info["R_needed"] = R_need
    if not np.isfinite(R_need) or R_need > config.k_cand + 1:
        return False, info
    idx = np.nonzero(in_I)[0]
    hc = res.hc
    evaluated = []
    for count, i in enumerate(idx):
        z = engine.assemble(hc, d["eta"][i], d["U"][i])[0]
        zo = engine.observe(z)
        rs = rstar_set(engine, zo, config, rng)
        den = rs.size + (0 if res.j in rs else 1)
        den = min(den, config.k_cand + 1)
        f[i] = 1.0 / den - d["b"][i]
        evaluated.append(den)
        if count + 1 == min(trim_first, idx.size) and all(v < R_need for v in evaluated):
            info["trimmed"] = True
            break
    info["evaluated"] = len(evaluated)
    return bool(np.sum(w * f) <= 0), info


def run_methods(instance, config=None, engine=None, star=True):
    """Knockoff, cKnockoff and (optionally) cKnockoff* reports from one shared pass.

    The star refinement reuses the cKnockoff draws and only adds to its
    rejections, so R^Kn ⊆ R^cKn ⊆ R^cKn* holds by construction.
    """
    engine, obs = prepare(instance, config, engine)
    config = engine.config if config is None else config
    results, warn = calibrate(engine, obs, config, keep_draws=star)
    for w in warn:
        warnings.warn(w)
    diag = _diagnostics(obs)
    kn = obs.rejections.astype(int)
    ckn_extra = sorted(j for j, r in results.items() if r.rejected)
    ckn = np.union1d(kn, np.array(ckn_extra, dtype=int)).astype(int)
    out = {
        "knockoff": RejectionReport("knockoff", instance.alpha, kn, kn,
                                    _records(obs, instance.names, {}, set(kn.tolist())), diag, [], obs.filter_set, {}),
        "cknockoff": RejectionReport("cknockoff", instance.alpha, ckn, kn,
                                     _records(obs, instance.names, results, set(ckn.tolist())), diag, list(warn),
                                     obs.filter_set, results),
    }
    if not star:
        return out
    star_extra = []
    star_info = {}
    for j, r in results.items():
        if r.rejected or r.draws is None:
            continue
        rng = config.rng(j, sub=1)
        try:
            ok, info = refine_decision(engine, obs, r, config, rng)
        except Exception as exc:
            warn.append(f"star refinement {j}: {exc}")
            continue
        star_info[j] = info
        if ok:
            star_extra.append(j)
    rs = np.union1d(ckn, np.array(star_extra, dtype=int)).astype(int)
    recs = _records(obs, instance.names, results, set(rs.tolist()))
    for rec in recs:
        j = rec["index"]
        if j in star_info:
            rec["star"] = {**star_info[j], "status": "unverified-numerics"}
        if j in star_extra:
            rec["fallback_decision"] = "reject (unverified-numerics)"
    diag_star = dict(diag)
    diag_star["star_candidates"] = star_candidate_set(obs.scores, obs.ols.p_values, obs.filter_set, engine.alpha,
                                                      config.k_cand, engine.cmax)
    out["cknockoff-star"] = RejectionReport("cknockoff-star", instance.alpha, rs, kn, recs, diag_star, list(warn),
                                            obs.filter_set, results)
    return out


def cknockoff_star_reject(instance, config=None, engine=None):
    return run_methods(instance, config, engine, star=True)["cknockoff-star"]
