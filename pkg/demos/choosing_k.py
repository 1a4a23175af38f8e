"""
How many runs to trust
======================

The order-statistic threshold compares each run against the k-th best
conservative estimate.  k grows with the number of runs and shrinks with
delta; at delta = 0.5 it is simply half the field.
"""

import math

from runrace.criteria import normal_upper_tail, select_k

deltas = (0.01, 0.05, 0.1, 0.3, 0.5)
print("n    " + "".join(f"{d:>7g}" for d in deltas))
for n in (1, 2, 5, 10, 20, 50, 100, 250):
    print(f"{n:<5d}" + "".join(f"{select_k(n, d):>7d}" for d in deltas))

# k is the smallest count whose normal-approximation tail drops to delta
n, d = 50, 0.05
k = select_k(n, d)
z = lambda k: (k - n * d) / math.sqrt(n * d * (1 - d))
print(f"\nn={n}, delta={d}: tail at k-1 = {normal_upper_tail(z(k - 1)):.4f}, at k = {normal_upper_tail(z(k)):.4f}")
