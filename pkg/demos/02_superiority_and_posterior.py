"""
Probability of superiority and the differential posterior
=========================================================

With flat priors on location and scale, each sub-group's predictive is a
Student-t.  rho* is the probability that a treated participant's outcome
beats a control participant's; the differential posterior is the density of
the treatment-minus-control location difference.
"""

import numpy as np

from trialadapt import MatchedPair, Predictive, CollapsedStat, differential_posterior, rho_star

rng = np.random.default_rng(4)
control = rng.normal(0.0, 1.0, 20)
treated = rng.normal(0.6, 1.0, 25)
pair = MatchedPair.from_outcomes(control, treated)

r = rho_star(pair)
print(f"rho* = {r.rho:.4f}  (error estimate {r.err_estimate:.1e})")

# a Monte Carlo check drawn straight from the two predictives
pt = Predictive.from_stat(CollapsedStat.from_values(treated))
pc = Predictive.from_stat(CollapsedStat.from_values(control))
print("Monte Carlo:", np.mean(pt.sample(rng, 200_000) > pc.sample(rng, 200_000)).round(4))

# with three members per side the predictive has Cauchy tails
tiny = MatchedPair.from_outcomes([0.0, 1.0, 2.0], [10.0, 11.0, 12.0])
print("rho* for {10,11,12} vs {0,1,2}:", round(rho_star(tiny).rho, 4))

post = differential_posterior([pair])
lo, hi = post.central_interval_95
print(f"MAP {post.map_estimate:.3f}, std {post.std:.3f}, 95% interval [{lo:.3f}, {hi:.3f}]")
print("sample mean difference:", round(treated.mean() - control.mean(), 3))
