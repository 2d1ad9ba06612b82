"""End-to-end HIV-style pipeline through the CLI on a synthetic mutation table.

Writes raw.csv, X.csv, y.csv and report.json into a temporary directory.
"""

import json
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd

from cknockoff.cli import main

rng = np.random.default_rng(3)
n = 400
table = pd.DataFrame({f"P{i}": (rng.random(n) < rng.uniform(0.03, 0.25)).astype(int) for i in range(1, 51)})
table["P51"] = 0
table.loc[:1, "P51"] = 1            # two carriers: dropped
table["P52"] = table["P10"]         # duplicate: dropped
table["NFV"] = 10 ** (0.9 * table["P2"] + 0.7 * table["P30"] + 0.4 * rng.standard_normal(n))

out = Path(tempfile.mkdtemp(prefix="hiv_demo_"))
table.to_csv(out / "raw.csv", index=False)
main(["hiv-prep", "--in", str(out / "raw.csv"), "--drug-col", "NFV", "--out-design", str(out / "X.csv"),
      "--out-response", str(out / "y.csv"), "--log10"])
main(["run", "--design", str(out / "X.csv"), "--response", str(out / "y.csv"), "--alpha", "0.2",
      "--method", "cknockoff-star", "--report", str(out / "report.json")])
rep = json.loads((out / "report.json").read_text())
print("selected mutations:", [h["name"] for h in rep["hypotheses"] if h["rejected"]])
print("files in", out)
