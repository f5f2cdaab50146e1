"""Where does a +-1 killed branching walk stop exploding?

For binary branching the population grows like 2^n while each line of
descent survives with probability about exp(-n f(lam*)).  Scanning
P(X = +1) shows a single switch from subcritical to supercritical at
p = (2 - sqrt 3) / 4.
"""
import numpy as np

from krillwalk import OffspringLaw, classify, critical_plusminus_p, pemantle_law

two = OffspringLaw.constant(2)

rep = classify(pemantle_law(), two)
print(f"critical p = {(2 - np.sqrt(3)) / 4:.10f}")
print(f"lambda*    = {rep.lambda_star:.10f}  (log(2+sqrt 3) = {np.log(2 + np.sqrt(3)):.10f})")
print(f"f(lambda*) = {rep.f_star:.12f}  vs log 2 = {np.log(2):.12f}")
print(f"Lambda''   = {rep.variance_at_tilt:.12f}")
print()

print("   p      f(lam*)   verdict")
for p in np.linspace(0.02, 0.14, 7):
    r = classify(pemantle_law(p), two)
    print(f"{p:6.3f}  {r.f_star:8.4f}   {r.verdict}")

# other offspring means move the critical point
print()
for eb in (1.5, 3.0, 5.0):
    print(f"E B = {eb}: critical p = {critical_plusminus_p(eb):.8f}")
