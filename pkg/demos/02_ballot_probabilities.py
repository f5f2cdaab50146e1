"""Exact ballot-type probabilities by dynamic programming.

A zero-drift +-1 walk bridging to k = sqrt(n) while staying above -m has
probability of order (m+1)(k+m+1)/n^1.5.  The DP gives the exact value, so
the ratio to the formula should settle to a constant as n grows.  A short
horizon is also checked against brute-force enumeration in rationals.
"""
import math

from krillwalk import BarrierProfile, PathQuery, StepLaw, TerminalCondition
from krillwalk import path_probability, path_probability_exact
from krillwalk.pathlaw import ballot_asymptotic

sym = StepLaw.from_spec("-1:1/2,1:1/2")

q = PathQuery(sym, BarrierProfile.one_sided(4, 0), TerminalCondition.equals(0))
print("Dyck bridges of length 4:", path_probability_exact(q), "DP:", path_probability(q))
print()

print("    n    k   m   P(exact)        ratio to formula")
for n in (100, 400, 1600, 6400):
    k = math.isqrt(n)
    for m in (0, k // 2):
        p = path_probability(PathQuery(sym, BarrierProfile.one_sided(n, m), TerminalCondition.equals(k)))
        print(f"{n:5d} {k:4d} {m:3d}   {p:.6e}    {p / ballot_asymptotic('mean0', n, k, m):.4f}")

print()
print("corridor 0 <= S_i < k, ratio to (k+1)/n^2")
for n in (400, 1600, 6400):
    k = math.isqrt(n)
    p = path_probability(PathQuery(sym, BarrierProfile.fnk(n, k), TerminalCondition.equals(k)))
    u = path_probability(PathQuery(sym, BarrierProfile.useful(n, k, 64), TerminalCondition.equals(k)))
    print(f"n={n:5d}  ratio {p / ballot_asymptotic('fnk', n, k):.4f}   useful/fnk {u / p:.3f}")
