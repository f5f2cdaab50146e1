"""Monte Carlo killed trees against exact level means.

Size-biasing turns E|L_n| into (E B)^n P(S_i >= 0, i <= n), which the DP
evaluates exactly.  A million simulated trees should reproduce it within
a few standard errors at every depth.  Results do not depend on the
number of worker threads.
"""
import math

import numpy as np

from krillwalk import OffspringLaw, pemantle_law, simulate_batch
from krillwalk.engine import level_means_exact

law, two = pemantle_law(), OffspringLaw.constant(2)
b = simulate_batch(law, two, 10**6, seed=1, max_depth=20, level_cap=20)
mean, se = b.level_mean()
exact = level_means_exact(law, two, 20)
print(" n    MC mean     exact      z")
for n in (1, 2, 5, 10, 20):
    print(f"{n:2d}  {mean[n]:.6f}  {exact[n]:.6f}  {(mean[n] - exact[n]) / se[n]:+.2f}")

p = (2 - math.sqrt(3)) / 4
print(f"\nP(Z = 1): MC {np.mean(b.z == 1):.6f}, exact (1-p)^2 = {(1 - p) ** 2:.6f}")

again = simulate_batch(law, two, 10**5, seed=1, threads=1)
assert np.array_equal(again.z, simulate_batch(law, two, 10**5, seed=1, threads=4).z)
print("thread count does not change the trial stream")
