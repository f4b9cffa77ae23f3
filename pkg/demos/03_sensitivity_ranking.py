"""
Which sub-group can lose a member most safely?
==============================================

The expected derivative of rho* with respect to a sub-group's size tells us
how much the superiority estimate would move if that sub-group shrank.
Small magnitudes are safe removal targets.
"""

import numpy as np

from trialadapt import Arm, SimConfig, rank_candidates, side_sensitivity, simulate
from trialadapt import MatchedPair, rho_star

snap = simulate(SimConfig(steps=60, seed=3))[-1]
report = rank_candidates(snap)
for e in report.ranking:
    print(f"{e.arm.name:9s} {e.tier.name:17s} n={e.n_current:3d}  dE[rho*]/dn = {e.value:+.3e}")
print("next removal from:", report.head.arm.name, report.head.tier.name)

# compare against actually dropping each member in turn
rng = np.random.default_rng(0)
pair = MatchedPair.from_outcomes(rng.normal(0, 1, 8), rng.normal(0.5, 1, 30))
base = rho_star(pair).rho
for arm in Arm:
    data = pair.side(arm)
    drops = []
    for i in range(data.n):
        keep = np.arange(data.n) != i
        reduced = type(data)(data.arm, data.tier, data.outcomes[keep], data.ids[keep])
        drops.append(base - rho_star(pair.with_side(arm, reduced)).rho)
    print(f"{arm.name:9s} analytic {side_sensitivity(pair, arm).value:+.2e}   leave-one-out {np.mean(drops):+.2e}")
