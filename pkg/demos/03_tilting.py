"""Change of measure: the same path event computed two ways.

Under the lam*-tilted law the Pemantle walk becomes the symmetric +-1
walk.  Reweighting by exp(-n f(lam*) - lam* S_n) recovers the original
probability, even when it is far below the double-precision range.
"""
import math

from krillwalk import BarrierProfile, PathQuery, TerminalCondition, pemantle_law
from krillwalk import find_lambda_star
from krillwalk.pathlaw import path_log_probability, tilted_path_result

law = pemantle_law()
f_star = find_lambda_star(law).f_star
for n in (10, 100, 1000, 2000):
    q = PathQuery(law, BarrierProfile.one_sided(n, 0), TerminalCondition.at_least(0))
    direct = path_log_probability(q)
    tilted = tilted_path_result(q).log_probability
    # Chernoff: P(S_n >= 0) <= exp(-n f(lam*)), kept in log form since 2^-2000 underflows
    bound = -n * f_star
    print(f"n={n:5d}  log P = {direct:14.6f}  tilted {tilted:14.6f}  "
          f"rel diff {abs(math.expm1(tilted - direct)):.1e}  log Chernoff {bound:12.4f}")
