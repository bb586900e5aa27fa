"""
How tight are the perturbation bounds?
======================================

Draw random stable chains, perturb them, and compare the stationary
distance with three bounds: the rate-based eq6, the delta-based eq9 and
the transfer bound per62. A ratio near 1 means the bound is nearly exact.
"""

from dobrushin import ExperimentConfig, tightness_experiment
from dobrushin.spaces import classical

config = ExperimentConfig(classical(4), trials=50, seed=3,
                          perturbation_magnitudes=(0.01, 0.05, 0.1), horizon=32)
table = tightness_experiment(config)
print(len(table.rows), "rows")

for mag, entry in table.summary["per_magnitude"].items():
    print(f"\nmagnitude {mag}: transfer applies in {entry['transfer_applies']} of {entry['rows']}")
    for key in ("ratio_eq6", "ratio_eq9", "ratio_per62"):
        q = entry[key]
        print(f"  {key:12s} median {q['median']:.3f}  q90 {q['q90']:.3f}  max {q['max']:.3f}")
    print("  worst slack over all bounds:", entry["worst_slack"])

# the full table can be written as CSV plus a JSON summary
# table.write("tightness.csv")
