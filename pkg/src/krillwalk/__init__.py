"""Killed branching random walks: criticality, constrained paths, simulation and tail experiments."""

__version__ = "0.1.0"

from .errors import *  # noqa: E402,F401,F403
from .model import (  # noqa: E402
    CriticalityReport,
    OffspringLaw,
    StepLaw,
    classify,
    critical_plusminus_p,
    cumulant,
    find_lambda_star,
    pemantle_law,
    tilt,
)
from .pathlaw import (  # noqa: E402
    BarrierProfile,
    PathQuery,
    TerminalCondition,
    path_log_probability,
    path_probability,
    path_probability_exact,
    tilted_path_probability,
)
from .engine import (  # noqa: E402
    RngContract,
    explore_unkilled_max,
    level_mean_exact,
    simulate_batch,
    simulate_killed_tree,
    simulate_spine,
)
from .lab import ez_series, m_tail, max_profile, z_mean_bracket, z_tail, zlogz_trend  # noqa: E402
