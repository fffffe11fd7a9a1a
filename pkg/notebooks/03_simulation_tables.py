# %% [markdown]
# # Simulation tables from the acceptance cache
#
# `python tests/test_acceptance.py --warm` stores one JSON file per replication
# under `acceptance_cache/`. This script aggregates whatever is there into the
# layout of the reference tables: |Bias| x 100, l2 error and AUC per method.

# %%
import json
from pathlib import Path

import numpy as np

from strifle.cli import format_bias
from strifle.simulation import RepResult, aggregate

cache = Path(__file__).resolve().parents[1] / "acceptance_cache" if "__file__" in globals() else Path("acceptance_cache")

# %% Aggregate each scenario directory
for oracle_file in sorted(cache.glob("oracle_*.json")):
    scenario = oracle_file.name.split("_")[1]
    beta0 = np.asarray(json.loads(oracle_file.read_text())["beta0"])
    for rep_dir in sorted(cache.glob(f"{scenario}_*")):
        reps = [RepResult(**r) for f in sorted(rep_dir.glob("rep*.json")) for r in json.loads(f.read_text())]
        if not reps:
            continue
        used = {r.rep for r in reps if r.error is None}
        print(f"\n{scenario}  ({len(used)} of {len({r.rep for r in reps})} replications used)")
        print(f"{'method':9s} {'|Bias|':>7s} {'l2':>6s} {'AUC':>6s} {'rho=1':>6s}")
        for row in aggregate(reps, beta0):
            rho = "" if row.rho_rate is None else f"{row.rho_rate:.2f}"
            print(f"{row.method:9s} {format_bias(row.abs_bias):>7s} {row.l2_err:6.2f} {row.auc:6.3f} {rho:>6s}")
