"""
How the refinement term orders responses
=========================================

A policy whose augmented contexts track the true reward produces a
refinement that ranks every response the way r* does.
"""

import numpy as np

from prefopt import GroundTruth, check_monotone_equivalence, check_telescoping, delta_refine
from prefopt import make_assumption_satisfying_policies

rng = np.random.default_rng(0)
gt = GroundTruth(rng.permutation(6)[None, :] + rng.uniform(0, 0.5, (1, 6)))
pi, ref = make_assumption_satisfying_policies(gt, beta=0.1, prompt_gain=0.5)
print("rewards      ", np.round(gt.rewards[0], 2))

# distance of each response from the best one, measured by the refinement
y_star = gt.best_response(0)
gaps = [delta_refine(pi, ref, 0, y_star, y, 0.1).delta for y in range(6)]
print("Delta(y, y*) ", np.round(gaps, 3))
print("same order as -r*:", np.array_equal(np.argsort(gaps), np.argsort(-gt.rewards[0])))

# the pairwise refinement telescopes through any anchor
print("telescoping residual", check_telescoping(pi, ref, 0, 1, 4, 2, 0.1))

report = check_monotone_equivalence(gt, pi, ref, 0)
print(f"{report.checked_pairs} pairs, {report.checked_pair_pairs} pair-of-pairs, {report.violations} violations")

# flip the sign: still telescopes, no longer agrees with r*
flipped = lambda *a: -delta_refine(*a).delta
print("flipped telescoping residual", check_telescoping(pi, ref, 0, 1, 4, 2, 0.1, delta=flipped))
print("flipped violations", check_monotone_equivalence(gt, pi, ref, 0, delta=flipped).violations)
