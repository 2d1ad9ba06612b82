"""Simulation scenarios, signal calibration and the trial runner."""

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .calibration import CalibrationConfig, Engine
from .knockoffs import build_knockoffs
from .linear_model import DegenerateDesignError, DesignFactors, ProblemInstance, bh_reject, ols_fit, standardize_columns

log = logging.getLogger(__name__)

DESIGNS = ("iid-normal", "mcc", "mcc-block", "coef-ar", "x-ar")
METHODS = ("bh", "knockoff", "cknockoff", "cknockoff-star")


class CalibrationError(RuntimeError):
    pass


def mcc_block(G, r):
    """One block: one-hot treatment design of r(G+1) units projected orthogonal to 1."""
    groups = np.repeat(np.arange(G + 1), r)  # group 0 is the control
    onehot = (groups[:, None] == np.arange(1, G + 1)[None, :]).astype(float)
    N = r * (G + 1)
    Qc, _ = np.linalg.qr(np.ones((N, 1)), mode="complete")
    V1 = Qc[:, 1:]
    return V1.T @ onehot


def mcc_design(K, G, r):
    """Block-diagonal MCC design with K blocks of shape (r(G+1) - 1) × G."""
    if min(K, G, r) < 1:
        raise ValueError("K, G and r must be positive")
    blk = mcc_block(G, r)
    nb, gb = blk.shape
    X = np.zeros((K * nb, K * gb))
    for k in range(K):
        X[k * nb:(k + 1) * nb, k * gb:(k + 1) * gb] = blk
    return X


def reduce_rows(X, n):
    """Same Gram matrix with `n` rows (n ≥ m): X = QR  ->  [R; 0]."""
    N, m = X.shape
    if n == N:
        return X
    if n < m:
        raise ValueError("cannot go below m rows")
    if n > N:
        out = np.zeros((n, m))
        out[:N] = X
        return out
    _, R = np.linalg.qr(X)
    out = np.zeros((n, m))
    out[:m] = R
    return out


def ar1_cov(m, rho=0.5):
    idx = np.arange(m)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def _orthonormal_frame(rng, n, m):
    Q, _ = np.linalg.qr(rng.standard_normal((n, m)))
    return Q


@dataclass
class Scenario:
    design_kind: str = "iid-normal"
    m: int = 100
    n: int = 300
    m1: int = 10
    beta_star: float = 3.0
    noise: str = "gaussian"
    sigma: float = 1.0
    df: float = None
    seed: int = 0
    K: int = None
    G: int = None
    r: int = 3
    ar_rho: float = 0.5
    fixed_design: bool = None

    def __post_init__(self):
        if self.design_kind not in DESIGNS:
            raise ValueError(f"unknown design {self.design_kind!r}")
        if self.design_kind == "mcc":
            self.K, self.G = 1, self.G or self.m
        elif self.design_kind == "mcc-block":
            self.G = self.G or 5
            self.K = self.K or max(1, self.m // self.G)
        if self.design_kind in ("mcc", "mcc-block"):
            self.m = self.K * self.G
        if not 0 <= self.m1 <= self.m:
            raise ValueError("need 0 <= m1 <= m")
        if self.noise not in ("gaussian", "student-t"):
            raise ValueError("noise must be gaussian or student-t")
        if self.noise == "student-t" and not self.df:
            raise ValueError("student-t noise needs df")
        if self.fixed_design is None:
            self.fixed_design = self.design_kind in ("mcc", "mcc-block", "coef-ar")

    def rng(self, trial, stream=0):
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(trial, stream)))


def design_matrix(scn, rng):
    kind = scn.design_kind
    if kind == "iid-normal":
        X = rng.standard_normal((scn.n, scn.m))
    elif kind in ("mcc", "mcc-block"):
        X = reduce_rows(mcc_design(scn.K, scn.G, scn.r), scn.n)
    elif kind == "coef-ar":
        # (XᵀX)⁻¹ = AR(1) covariance, so OLS estimates are AR(1) correlated
        prec = np.linalg.inv(ar1_cov(scn.m, scn.ar_rho))
        Lc = np.linalg.cholesky(prec)
        X = _orthonormal_frame(rng, scn.n, scn.m) @ Lc.T
    else:  # x-ar: rows iid N(0, AR(1))
        Lc = np.linalg.cholesky(ar1_cov(scn.m, scn.ar_rho))
        X = rng.standard_normal((scn.n, scn.m)) @ Lc.T
    return standardize_columns(X)[0]


def generate(scn, trial_index, alpha=0.1, X=None):
    """One simulated instance and its non-null mask, deterministic in (seed, trial)."""
    rng = scn.rng(trial_index)
    if X is None:
        design_rng = scn.rng(0, stream=1) if scn.fixed_design else scn.rng(trial_index, stream=1)
        X = design_matrix(scn, design_rng)
    nonnull = np.zeros(scn.m, dtype=bool)
    if scn.m1:
        nonnull[rng.choice(scn.m, scn.m1, replace=False)] = True
    beta = np.where(nonnull, scn.beta_star, 0.0)
    if scn.noise == "gaussian":
        eps = scn.sigma * rng.standard_normal(scn.n)
    else:
        eps = scn.sigma * rng.standard_t(scn.df, scn.n)
    y = X @ beta + eps
    return ProblemInstance(X, y, alpha), nonnull


def fdp_tpp(rej, nonnull):
    rej = np.asarray(rej, dtype=int)
    R = rej.size
    V = int(np.count_nonzero(~nonnull[rej])) if R else 0
    m1 = int(nonnull.sum())
    fdp = V / R if R else 0.0
    tpp = (R - V) / m1 if m1 else 0.0
    return fdp, tpp


def bh_tpr(scn, alpha, trials, beta_star):
    s = replace(scn, beta_star=beta_star)
    X = design_matrix(s, s.rng(0, 1)) if s.fixed_design else None
    factors = DesignFactors.from_design(X) if X is not None else None
    tot = 0.0
    for t in range(trials):
        inst, nonnull = generate(s, t, alpha, X)
        p = ols_fit(inst, factors).p_values
        tot += fdp_tpp(bh_reject(p, alpha), nonnull)[1]
    return tot / trials


def calibrate_signal(scn, target_tpr=0.5, comparator_alpha=0.2, trials=200, tol=0.02, max_iter=40):
    """Bisection on β* so that BH at `comparator_alpha` has TPR ≈ `target_tpr`."""
    if not 0 < target_tpr < 1:
        raise ValueError("target must lie in (0, 1)")
    if scn.m1 == 0:
        raise CalibrationError("no signals to calibrate")
    pilot = replace(scn, seed=scn.seed + 7919)
    lo, hi = 0.0, 1.0
    f_hi = bh_tpr(pilot, comparator_alpha, trials, hi)
    expand = 0
    while f_hi < target_tpr:
        lo, hi = hi, 2 * hi
        f_hi = bh_tpr(pilot, comparator_alpha, trials, hi)
        expand += 1
        if expand > 20:
            raise CalibrationError("could not bracket the target power")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f_mid = bh_tpr(pilot, comparator_alpha, trials, mid)
        if abs(f_mid - target_tpr) < tol:
            return mid
        if f_mid < target_tpr:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class TrialAggregate:
    methods: tuple
    alpha: float
    fdp: dict
    tpp: dict
    runtime: dict
    sandwich_violations: int = 0
    failures: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def fdr(self, method):
        return float(np.mean(self.fdp[method]))

    def tpr(self, method):
        return float(np.mean(self.tpp[method]))

    def se(self, values):
        v = np.asarray(values, dtype=float)
        return float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0

    def fdr_se(self, method):
        return self.se(self.fdp[method])

    def tpr_se(self, method):
        return self.se(self.tpp[method])

    def summary(self):
        return {
            m: {
                "fdr": self.fdr(m), "fdr_se": self.fdr_se(m),
                "tpr": self.tpr(m), "tpr_se": self.tpr_se(m),
                "trials": len(self.fdp[m]), "runtime": float(np.sum(self.runtime[m])),
                "failures": self.failures.get(m, 0),
            }
            for m in self.methods
        } | {"alpha": self.alpha, "sandwich_violations": self.sandwich_violations, **self.extras}

    def tidy(self):
        rows = [
            {"method": m, "trial": t, "fdp": f, "tpp": p}
            for m in self.methods
            for t, (f, p) in enumerate(zip(self.fdp[m], self.tpp[m]))
        ]
        return pd.DataFrame(rows, columns=["method", "trial", "fdp", "tpp"])


def run_trials(scn, methods, trials, alpha, config=None, trial_offset=0, collect_budgets=False):
    """Run `trials` simulated problems; returns a TrialAggregate.

    Parameters
    ----------
    scn : Scenario
    methods : sequence of {"bh", "knockoff", "cknockoff", "cknockoff-star"}
    trials : int
    alpha : float
    config : CalibrationConfig, optional
        Seed and trial fields are overwritten per trial.
    collect_budgets : bool
        Also record Σ_{H₀} bⱼ and Σ_{H₀} b⁰ⱼ per trial.
    """
    from .star import run_methods

    methods = tuple(methods)
    if not methods:
        raise ValueError("need at least one method")
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    base = config or CalibrationConfig()
    fdp = {m: [] for m in methods}
    tpp = {m: [] for m in methods}
    runtime = {m: [] for m in methods}
    failures = {}
    violations = 0
    bsum, b0sum = [], []
    engine = None
    X_fixed = design_matrix(scn, scn.rng(0, 1)) if scn.fixed_design else None
    factors = DesignFactors.from_design(X_fixed) if X_fixed is not None else None
    kn_methods = [m for m in methods if m != "bh"]
    for t in range(trial_offset, trial_offset + trials):
        inst, nonnull = generate(scn, t, alpha, X_fixed)
        if "bh" in methods:
            t0 = time.perf_counter()
            rej = bh_reject(ols_fit(inst, factors).p_values, alpha)
            runtime["bh"].append(time.perf_counter() - t0)
            f, p = fdp_tpp(rej, nonnull)
            fdp["bh"].append(f)
            tpp["bh"].append(p)
        if not kn_methods:
            continue
        cfg = replace(base, seed=scn.seed, trial=t)
        try:
            t0 = time.perf_counter()
            if engine is None or not scn.fixed_design:
                ens = build_knockoffs(inst.X, factors=factors)
                engine = Engine(inst.X, alpha, cfg, ensemble=ens)
            engine.config = cfg
            obs_t = time.perf_counter() - t0
            want_star = "cknockoff-star" in methods
            want_ckn = want_star or "cknockoff" in methods
            t1 = time.perf_counter()
            if want_ckn:
                reports = run_methods(inst, cfg, engine, star=want_star)
            else:
                from .calibration import knockoff_report
                reports = {"knockoff": knockoff_report(inst, cfg, engine)}
            elapsed = time.perf_counter() - t1
        except Exception as exc:  # record and move on
            log.warning("trial %d failed: %s", t, exc)
            for m in kn_methods:
                failures[m] = failures.get(m, 0) + 1
            continue
        if "knockoff" in methods:
            runtime["knockoff"].append(obs_t)
        for m in kn_methods:
            if m != "knockoff":
                runtime[m].append(obs_t + elapsed)
            f, p = fdp_tpp(reports[m].rejections, nonnull)
            fdp[m].append(f)
            tpp[m].append(p)
        kn = set(reports["knockoff"].rejections.tolist())
        if "cknockoff" in reports:
            ck = set(reports["cknockoff"].rejections.tolist())
            ok = kn <= ck
            if "cknockoff-star" in reports:
                ok = ok and ck <= set(reports["cknockoff-star"].rejections.tolist())
            violations += 0 if ok else 1
        if collect_budgets:
            d = reports["knockoff"].diagnostics
            bsum.append(float(np.sum(np.asarray(d["b"])[~nonnull])))
            b0sum.append(float(np.sum(np.asarray(d["b0"])[~nonnull])))
    agg = TrialAggregate(methods, alpha, fdp, tpp, runtime, violations, failures)
    if collect_budgets:
        agg.extras["budget_null_sum"] = bsum
        agg.extras["budget0_null_sum"] = b0sum
    return agg


def hiv_preprocess(table, resistance_col, alpha=0.05, min_count=3, mutation_cols=None):
    """Design/response from a raw mutation table.

    Columns with fewer than `min_count` ones are dropped, exact duplicate
    columns are removed keeping the first, no intercept is added and the
    surviving columns are standardized. Rows with a missing outcome are
    dropped; transforming the outcome is left to the caller.

    Returns
    -------
    ProblemInstance, list of kept column names
    """
    df = table if isinstance(table, pd.DataFrame) else pd.DataFrame(table)
    if resistance_col not in df.columns:
        raise KeyError(f"no column {resistance_col!r}")
    df = df[df[resistance_col].notna()]
    y = df[resistance_col].to_numpy(dtype=float)
    cols = mutation_cols if mutation_cols is not None else [c for c in df.columns if c != resistance_col]
    M = df[cols].astype(float)
    vals = M.to_numpy()
    if not np.all(np.isin(vals, (0.0, 1.0))):
        raise ValueError("mutation indicators must be binary")
    counts = vals.sum(axis=0)
    kept = [c for c, k in zip(cols, counts) if k >= min_count]
    M = M[kept]
    dup = M.T.duplicated(keep="first")
    kept = [c for c, d in zip(kept, dup) if not d]
    if not kept:
        raise DegenerateDesignError("no mutation columns survive the filters")
    X = M[kept].to_numpy(dtype=float)
    Xs, _ = standardize_columns(X)
    return ProblemInstance(Xs, y, alpha, tuple(kept)), kept
