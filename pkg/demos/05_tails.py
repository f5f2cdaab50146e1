"""Heavy tails at criticality.

Pemantle's law makes P(Z > n) ~ c / (n log^2 n) with c = 4.915, so the
compensator n log^2(n) P(Z > n) should creep towards c.  The maximum
displacement M obeys e^{lam* k} P(M >= k) <= 1.  Finally E[Z] is computed
from the level-mean series and checked against the simulated mean, which
needs a bracket because Z has infinite variance.
"""
import math

from krillwalk import OffspringLaw, pemantle_law, simulate_batch
from krillwalk.lab import ez_series, m_tail, z_mean_bracket, z_tail

law, two = pemantle_law(), OffspringLaw.constant(2)
b = simulate_batch(law, two, 2 * 10**6, seed=3, max_nodes=10**5)

print("threshold   P(Z>n)      compensator")
for r in z_tail(law, two, 0, [100, 316, 1000, 3162], seed=3, batch=b).rows:
    print(f"{r['threshold']:9d}   {r['estimate']:.3e}   {r['compensator']:.3f}")

print("\n k   P(M>=k)     e^(lk) P(M>=k)   k e^(lk) P(M=k)")
for r in m_tail(law, two, 0, 5, seed=3, batch=b).rows[1:]:
    print(f"{r['threshold']:2d}   {r['estimate']:.3e}   {r['compensator']:.3f}            {r['point_compensator']:.3f}")

series = ez_series(law, two, 5000)
br = z_mean_bracket(b)
print(f"\nE[Z] from series: {series.total:.5f} (term slope {series.slope:.3f})")
print(f"MC bracket: [{br['lower']:.3f}, {br['upper']:.3f}]")
