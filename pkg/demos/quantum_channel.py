"""
Amplitude damping on a qubit
============================

The amplitude-damping channel with decay probability gamma pushes every
state toward the ground state. On the quantum state space delta can only
be estimated from below by sampling, so stability is certified with the
analytic bound sqrt(1 - gamma).
"""

import math

import numpy as np

from dobrushin import amplitude_damping, classify, dobrushin_delta, tightness_report
from dobrushin.harness import perturb_toward

gamma = 0.5
T = amplitude_damping(gamma)
print("completely positive:", T.cp_certified)
print("analytic delta upper bound:", T.delta_upper, "=", math.sqrt(1 - gamma))

# the sampled estimate is a lower bound and must sit below the analytic value
est = dobrushin_delta(T, budget=64)
print("sampled delta:", est.value, " certified:", est.certified)

report = classify(T, n_check=32)
print("classification:", report.classification, " n0 =", report.n0)
print("fixed point (density matrix):")
print(np.round(report.fixed_point.matrix(), 12))

# a nearby channel; the bounds use the attached analytic delta
S = perturb_toward(T, 0.05, seed=1)
rep = tightness_report(T, S, horizon=32)
print()
print("||T - S|| (sampled) =", round(rep.norm_TS, 6))
print("flags:", rep.flags)
print("worst slack per bound:", {k: f"{v:.2e}" for k, v in sorted(rep.worst_slack.items())})
