"""
Guided versus random removal
============================

Both policies start from the same simulated trial and remove one participant
per step after a burn-in.  We follow the posterior and the sub-group sizes.
"""

import numpy as np

from trialadapt import Policy, protocol_config, run_experiment

result = run_experiment(protocol_config(replicates=3, master_seed=11))

for rep in result.replicates:
    for pol in Policy:
        rows = rep.runs[pol].rows
        last = rows[-1]
        print(f"replicate {rep.replicate} {pol.value:17s} final MAP {last.map_estimate:+.3f} "
              f"(truth {last.ground_truth:+.3f}) std {last.posterior_std:.3f}")

# sub-group sizes at the start and end of the first replicate
for pol in Policy:
    sizes = np.array(result.replicates[0].runs[pol].sizes)[:, 2:]
    print(pol.value, "sizes", sizes[0].tolist(), "->", sizes[-1].tolist())

r = result.report
print("SG wins on final-third posterior std:", r["win_rate_posterior_std"])
print("SG wins on final-third |MAP - truth|:", r["win_rate_abs_error"])
