"""Run every method on one simulated dataset and print the per-variable report."""

import numpy as np

from cknockoff.calibration import CalibrationConfig
from cknockoff.linear_model import ProblemInstance, bh_reject, ols_fit, standardize_columns
from cknockoff.star import run_methods

rng = np.random.default_rng(0)
n, m, alpha = 200, 60, 0.1
X, _ = standardize_columns(rng.standard_normal((n, m)))
beta = np.zeros(m)
beta[[3, 17, 41]] = [4.5, -4.0, 3.5]
y = X @ beta + rng.standard_normal(n)
inst = ProblemInstance(X, y, alpha)

reports = run_methods(inst, CalibrationConfig(seed=1))
print("BH:", bh_reject(ols_fit(inst).p_values, alpha).tolist())
for name, rep in reports.items():
    print(f"{name}:", rep.rejections.tolist())

ck = reports["cknockoff"]
print("\nfallback tests (filter set):")
print(f"{'j':>3}{'W':>9}{'p':>10}  decision       samples")
for rec in ck.records:
    if rec["fallback_decision"] is not None:
        print(f"{rec['index']:>3}{rec['W']:>9.3f}{rec['p_value']:>10.2e}  "
              f"{rec['fallback_decision']:<14}{rec['samples_used']:>8}")
