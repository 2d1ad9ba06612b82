"""Knockoffs vs cKnockoff on an MCC-Block design with few signals at small α.

With m₁ = 3 signals and α = 0.05 the knockoff filter needs at least 1/α = 20
positive statistics before it can reject anything, so it almost never does.
The fallback tests recover most of that lost power.

    python demos/threshold_phenomenon.py [trials]
"""

import sys
import warnings

from cknockoff.scenarios import Scenario, run_trials

warnings.simplefilter("ignore")

trials = int(sys.argv[1]) if len(sys.argv) > 1 else 20
scn = Scenario("mcc-block", m=100, n=300, m1=3, beta_star=3.6, seed=1)
agg = run_trials(scn, ["bh", "knockoff", "cknockoff", "cknockoff-star"], trials, alpha=0.05)

print(f"MCC-Block K={scn.K} G={scn.G}, m1={scn.m1}, alpha=0.05, {trials} trials")
print(f"{'method':<16}{'FDR':>8}{'TPR':>8}{'sec/trial':>11}")
for m in agg.methods:
    s = agg.summary()[m]
    print(f"{m:<16}{s['fdr']:>8.3f}{s['tpr']:>8.3f}{s['runtime'] / max(s['trials'], 1):>11.3f}")
print("sandwich violations:", agg.sandwich_violations)
