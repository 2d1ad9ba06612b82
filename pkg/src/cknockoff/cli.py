"""Command line entry point: `run`, `simulate` and `hiv-prep`."""

import argparse
import json
import logging
import sys
import warnings
from dataclasses import replace

import numpy as np
import pandas as pd

from .calibration import CalibrationConfig, Engine, RejectionReport, _jsonable, cknockoff_reject, knockoff_report
from .knockoffs import build_knockoffs, load_ensemble, save_ensemble
from .linear_model import ProblemInstance, bh_reject, ols_fit
from .scenarios import DESIGNS, METHODS, Scenario, calibrate_signal, hiv_preprocess, run_trials
from .star import cknockoff_star_reject
from .statistics import KINDS

log = logging.getLogger("cknockoff")


def read_design(path):
    df = pd.read_csv(path)
    if df.isna().any().any():
        raise ValueError(f"{path}: missing values in the design")
    try:
        X = df.to_numpy(dtype=float)
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric design cells") from exc
    return X, [str(c) for c in df.columns]


def read_response(path):
    df = pd.read_csv(path, header=None)
    if df.shape[1] != 1:
        raise ValueError(f"{path}: response must be a single column")
    col = pd.to_numeric(df.iloc[:, 0], errors="coerce")
    if np.isnan(col.iloc[0]) and df.shape[0] > 1:  # header row
        col = col.iloc[1:]
    if col.isna().any():
        raise ValueError(f"{path}: missing or non-numeric response values")
    return col.to_numpy(dtype=float)


def _bh_report(inst):
    ols = ols_fit(inst)
    rej = bh_reject(ols.p_values, inst.alpha)
    recs = [{"index": j, "name": inst.names[j], "W": None, "p_value": float(ols.p_values[j]), "T": None,
             "in_knockoff_set": False, "fallback_decision": None, "samples_used": 0, "truncated": False,
             "rejected": bool(j in set(rej.tolist()))} for j in range(inst.m)]
    return RejectionReport("bh", inst.alpha, rej, np.array([], dtype=int), recs, {}, [], None, {})


def cmd_run(args):
    X, names = read_design(args.design)
    y = read_response(args.response)
    inst = ProblemInstance.from_raw(X, y, args.alpha, names)
    cfg = CalibrationConfig(stat=args.stat, seed=args.seed, truncation=args.mc_truncation,
                            alpha0_frac=args.alpha0_frac, k_cand=args.kcand, k_step=args.kstep,
                            n_jobs=args.jobs, lam=args.lam)
    if args.method == "bh":
        report = _bh_report(inst)
    else:
        if args.load_knockoffs:
            ens = load_ensemble(inst.X, *args.load_knockoffs)
        else:
            ens = build_knockoffs(inst)
        if args.save_knockoffs:
            save_ensemble(ens, *args.save_knockoffs)
        engine = Engine(inst.X, inst.alpha, cfg, ensemble=ens)
        fn = {"knockoff": knockoff_report, "cknockoff": cknockoff_reject,
              "cknockoff-star": cknockoff_star_reject}[args.method]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            report = fn(inst, cfg, engine)
    out = report.to_dict()
    out["names"] = list(inst.names)
    if args.report:
        with open(args.report, "w") as fh:
            json.dump(out, fh, indent=2)
    rej = [inst.names[j] for j in report.rejections]
    print(f"{args.method}: {len(rej)} rejections at alpha={args.alpha}")
    for name in rej:
        print(name)
    return 0


def cmd_simulate(args):
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    noise = "student-t" if args.t_df else "gaussian"
    scn = Scenario(args.scenario, m=args.m, n=args.n, m1=args.m1, beta_star=1.0, noise=noise, df=args.t_df,
                   seed=args.seed, K=args.K, G=args.G, r=args.r)
    if args.beta is None:
        beta = calibrate_signal(scn, target_tpr=args.target_tpr)
        log.info("calibrated beta* = %.4f", beta)
    else:
        beta = args.beta
    scn = replace(scn, beta_star=beta)
    if scn.n < 2 * scn.m:
        raise ValueError(f"need n >= 2m (got n={scn.n}, m={scn.m})")
    cfg = CalibrationConfig(stat=args.stat, seed=args.seed, n_jobs=args.jobs)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        agg = run_trials(scn, methods, args.trials, args.alpha, cfg, collect_budgets=True)
    summary = agg.summary()
    summary["scenario"] = {"design": scn.design_kind, "m": scn.m, "n": scn.n, "m1": scn.m1, "beta_star": beta,
                           "K": scn.K, "G": scn.G, "r": scn.r, "noise": noise, "df": args.t_df, "seed": args.seed}
    summary["budget_null_mean"] = float(np.mean(summary.pop("budget_null_sum"))) if args.trials else None
    summary["budget0_null_mean"] = float(np.mean(summary.pop("budget0_null_sum"))) if args.trials else None
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(_jsonable(summary), fh, indent=2)
    tidy_path = args.tidy or (args.out.rsplit(".", 1)[0] + "_ecdf.csv" if args.out else None)
    if tidy_path:
        agg.tidy().to_csv(tidy_path, index=False)
    for m in methods:
        s = summary[m]
        print(f"{m:>15}  FDR {s['fdr']:.4f} ± {s['fdr_se']:.4f}   TPR {s['tpr']:.4f} ± {s['tpr_se']:.4f}")
    print(f"sandwich violations: {summary['sandwich_violations']}")
    return 0


def cmd_hiv_prep(args):
    table = pd.read_csv(args.input)
    inst, kept = hiv_preprocess(table, args.drug_col, min_count=args.min_count)
    y = np.log10(inst.y) if args.log10 else inst.y
    pd.DataFrame(inst.X, columns=kept).to_csv(args.out_design, index=False)
    pd.DataFrame({args.drug_col: y}).to_csv(args.out_response, index=False)
    print(f"kept {len(kept)} of {table.shape[1] - 1} mutation columns, n={inst.n}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="cknockoff", description="Calibrated knockoffs for the Gaussian linear model.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a selection method on a design/response pair")
    r.add_argument("--design", required=True, help="CSV with a header row of variable names")
    r.add_argument("--response", required=True, help="single-column CSV")
    r.add_argument("--alpha", type=float, default=0.05)
    r.add_argument("--method", choices=METHODS, default="cknockoff")
    r.add_argument("--stat", choices=KINDS, default="lcd-t")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--mc-truncation", type=int, default=500)
    r.add_argument("--alpha0-frac", type=float, default=0.1)
    r.add_argument("--kcand", type=int, default=3)
    r.add_argument("--kstep", type=int, default=3)
    r.add_argument("--lam", type=float, default=None, help="fixed penalty (required when n = 2m)")
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--save-knockoffs", nargs=2, metavar=("XTILDE_CSV", "D_CSV"))
    r.add_argument("--load-knockoffs", nargs=2, metavar=("XTILDE_CSV", "D_CSV"))
    r.add_argument("--report", help="write the JSON report here")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("simulate", help="desk-scale FDR/TPR simulation")
    s.add_argument("--scenario", choices=DESIGNS, default="mcc-block")
    s.add_argument("--m", type=int, default=100)
    s.add_argument("--n", type=int, default=300)
    s.add_argument("--K", type=int, default=None)
    s.add_argument("--G", type=int, default=None)
    s.add_argument("--r", type=int, default=3)
    s.add_argument("--m1", type=int, default=10)
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--trials", type=int, default=400)
    s.add_argument("--methods", default="bh,knockoff,cknockoff,cknockoff-star")
    s.add_argument("--beta", type=float, default=None, help="signal size; calibrated against BH when omitted")
    s.add_argument("--target-tpr", type=float, default=0.5)
    s.add_argument("--t-df", type=float, default=None, help="student-t noise with this many df")
    s.add_argument("--stat", choices=KINDS, default="lcd-t")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", help="JSON summary path")
    s.add_argument("--tidy", help="tidy CSV (method, trial, fdp, tpp); defaults next to --out")
    s.set_defaults(func=cmd_simulate)

    h = sub.add_parser("hiv-prep", help="preprocess a raw mutation table")
    h.add_argument("--in", dest="input", required=True)
    h.add_argument("--drug-col", required=True)
    h.add_argument("--out-design", required=True)
    h.add_argument("--out-response", required=True)
    h.add_argument("--min-count", type=int, default=3)
    h.add_argument("--log10", action="store_true", help="log10-transform the resistance outcome")
    h.set_defaults(func=cmd_hiv_prep)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
