"""
A two-state chain and a nearby perturbation
===========================================

Classify a 2x2 stochastic chain, then measure how far its stationary
state moves when the chain is perturbed, against the available bounds.
"""

import numpy as np

from dobrushin import (
    classify,
    dobrushin_delta,
    operator_norm,
    stability_transfer,
    tightness_report,
    validate_markov,
)
from dobrushin.spaces import classical

# columns are the transition distributions, so both matrices are column-stochastic
space = classical(2)
T = validate_markov([[0.9, 0.2], [0.1, 0.8]], space)
S = validate_markov([[0.88, 0.215], [0.12, 0.785]], space)

# delta(T) is half the largest l1 distance between two columns
est = dobrushin_delta(T)
print("delta(T) =", est.value, "certified:", est.certified)

report = classify(T, n_check=16)
print("classification:", report.classification)
print("n0 =", report.n0, " rho =", report.rho)
print("envelope C, alpha, n_tilde =", report.C, report.alpha, report.n_tilde)
print("fixed point x0 =", report.fixed_point.coords)

# the distance between the two chains in operator norm
print("||T - S|| =", operator_norm(T.matrix - S.matrix, space))

# the transfer gives S's fixed point through a Neumann series and bounds its distance to x0
res = stability_transfer(T, S, m=1)
print("transfer verdict:", res.verdict, " margin:", res.margin)
print("z0 =", res.z0.coords, " (exact: 43/67, 24/67 =", np.array([43, 24]) / 67, ")")

rep = tightness_report(T, S, horizon=16)
print()
print("stationary distance:", rep.actual_stationary_distance)
for key in ("eq6", "eq9", "per62"):
    print(f"  bound {key:6s} {rep.bounds[key]:.6f}  ratio {rep.ratios[key]:.4f}")
print("every bound respected:", rep.sound)

# the first few rows of the per-n trajectory table
print()
print("\n".join(rep.per_n_csv().splitlines()[:6]))
