"""
Simulating a two-arm trial
==========================

180 participants, half treated.  Effects accumulate with a decaying
increment, beliefs drift with the effect, and a three-choice questionnaire
sorts everyone into belief tiers.
"""

import numpy as np

from trialadapt import Arm, SimConfig, ground_truth_differential, simulate

snaps = simulate(SimConfig(steps=40, seed=1))

# every participant starts undecided, so only the middle pair is populated
print("step 0 tier sizes:", [(p.control.n, p.treatment.n) for p in snaps[0].pairs])
print("step 40 tier sizes:", [(p.control.n, p.treatment.n) for p in snaps[-1].pairs])

for k in (1, 5, 10, 20, 40):
    gt = ground_truth_differential(snaps[k])
    print(f"k={k:2d}  true differential {gt.differential:+.4f}  P(treated better) {gt.prob_better:.3f}")

# the noiseless trajectory has a closed form
quiet = SimConfig(steps=10, effect_noise_t=(0.02, 0.0), effect_noise_c=(0.0, 0.0), belief_noise_sd=0.0)
e10 = simulate(quiet)[-1].effect[90]
print("zero-noise e(10):", e10, "vs", 0.02 * np.exp(-np.arange(1, 11) / 10).sum())

treated = snaps[-1].arm == Arm.Treatment
print("mean treated belief after 40 steps:", snaps[-1].belief[treated].mean().round(4))
