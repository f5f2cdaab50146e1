"""Monte Carlo killed branching random walks, spines and un-killed maxima.

A particle at position ``S`` is *living* when its whole ancestral path,
itself included, stays ``>= 0``.  The root sits at 0 and is always living;
a child stepping to ``S < 0`` is killed and never expanded.  Note the
strict inequality: a particle at exactly 0 lives.

Trials are pure functions of ``(seed, trial index)`` (see
:mod:`krillwalk._kernels`), so batches are split into fixed blocks that any
number of worker threads can evaluate in any order.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .errors import BudgetExceeded
from .model import OffspringLaw, StepLaw, find_lambda_star
from .pathlaw import DEFAULT_STATE_CAP, stay_nonnegative_log_probs

BLOCK = 1 << 14
DEFAULT_MAX_NODES = 10**6
DEFAULT_MAX_DEPTH = 10**9

__all__ = [
    "RngContract",
    "TrialRecord",
    "TrialBatch",
    "SpineTrial",
    "simulate_killed_tree",
    "simulate_batch",
    "explore_unkilled_max",
    "explore_batch",
    "simulate_spine",
    "spine_alive_frequency",
    "spine_batch",
    "level_mean_exact",
    "level_means_exact",
]


@dataclass(frozen=True)
class RngContract:
    """A trial's randomness is fixed by ``(seed, stream)``."""

    seed: int
    stream: int = 0

    def __post_init__(self):
        if not (0 <= self.seed < 2**64 and 0 <= self.stream < 2**64):
            raise ValueError("seed and stream must be 64-bit unsigned integers")


def _tables(step: StepLaw, offspring: OffspringLaw):
    step_cdf = np.cumsum(step.p)
    step_cdf[-1] = 1.0
    off_cdf = np.cumsum(np.asarray(offspring.probs))
    off_cdf[-1] = 1.0
    return step.x, step_cdf, np.asarray(offspring.values, dtype=np.int64), off_cdf


def _check_limits(max_nodes, max_depth):
    if max_nodes <= 0 or max_depth <= 0:
        raise ValueError("max_nodes and max_depth must be positive")


@dataclass(frozen=True)
class TrialRecord:
    z: int
    m_living: int
    depth: int
    truncated: bool
    nodes_explored: int
    max_generation: int
    max_unique: bool
    m_all: int | None = None
    prune_bias_bound: float | None = None


@dataclass
class TrialBatch:
    """Column arrays for ``trials`` consecutive trials starting at ``start``."""

    seed: int
    start: int
    z: np.ndarray
    m_living: np.ndarray
    depth: np.ndarray
    truncated: np.ndarray
    explored: np.ndarray
    max_generation: np.ndarray
    max_multiplicity: np.ndarray
    level_sum: np.ndarray
    level_sq: np.ndarray
    max_nodes: int
    m_all: np.ndarray | None = None
    bias_bound: np.ndarray | None = None

    @property
    def trials(self) -> int:
        return int(self.z.size)

    def record(self, i: int) -> TrialRecord:
        return TrialRecord(
            z=int(self.z[i]),
            m_living=int(self.m_living[i]),
            depth=int(self.depth[i]),
            truncated=bool(self.truncated[i]),
            nodes_explored=int(self.explored[i]),
            max_generation=int(self.max_generation[i]),
            max_unique=bool(self.max_multiplicity[i] == 1),
            m_all=None if self.m_all is None else int(self.m_all[i]),
            prune_bias_bound=None if self.bias_bound is None else float(self.bias_bound[i]),
        )

    def level_mean(self) -> tuple[np.ndarray, np.ndarray]:
        """MC mean of ``|L_n|`` per generation and its standard error."""
        t = self.trials
        mean = self.level_sum / t
        var = self.level_sq / t - mean**2
        return mean, np.sqrt(np.maximum(var, 0.0) * t / max(t - 1, 1) / t)


def _blocks(trials: int, block: int):
    return [(s, min(block, trials - s)) for s in range(0, trials, block)]


def _workers(threads):
    if threads is None:
        return os.cpu_count() or 1
    return max(1, int(threads))


def simulate_batch(
    step: StepLaw,
    offspring: OffspringLaw,
    trials: int,
    seed: int,
    max_nodes: int = DEFAULT_MAX_NODES,
    max_depth: int = DEFAULT_MAX_DEPTH,
    level_cap: int = 0,
    threads: int | None = None,
    start: int = 0,
    block: int = BLOCK,
) -> TrialBatch:
    """Run trials ``start .. start+trials-1``; results do not depend on ``threads``."""
    _check_limits(max_nodes, max_depth)
    sv, sc, ov, oc = _tables(step, offspring)
    seed = np.uint64(seed)

    def job(b):
        s, n = b
        return K.killed_block(seed, start + s, n, sv, sc, ov, oc, max_nodes, max_depth, level_cap)

    blocks = _blocks(trials, block)
    with ThreadPoolExecutor(_workers(threads)) as pool:
        parts = list(pool.map(job, blocks))
    if not parts:
        empty = np.zeros(0, np.int64)
        zeros = np.zeros(level_cap + 1, np.int64)
        return TrialBatch(int(seed), start, empty, empty, empty, np.zeros(0, bool), empty,
                          empty, empty, zeros, zeros.copy(), max_nodes)
    narrow = (np.int64, np.int32, np.int32, np.bool_, np.int64, np.int32, np.int32)
    cols = [np.concatenate([p[i].astype(narrow[i], copy=False) for p in parts]) for i in range(7)]
    level_sum = np.sum([p[7] for p in parts], axis=0)
    level_sq = np.sum([p[8] for p in parts], axis=0)
    return TrialBatch(int(seed), start, *cols, level_sum, level_sq, max_nodes)


def simulate_killed_tree(
    step: StepLaw,
    offspring: OffspringLaw,
    rng: RngContract,
    max_nodes: int = DEFAULT_MAX_NODES,
    max_depth: int = DEFAULT_MAX_DEPTH,
) -> TrialRecord:
    """One killed tree, identified by ``rng.stream`` within ``rng.seed``."""
    batch = simulate_batch(step, offspring, 1, rng.seed, max_nodes, max_depth, threads=1, start=rng.stream)
    return batch.record(0)


def _lam_star_or_none(step: StepLaw):
    if max(step.values) <= 0:
        return None
    return find_lambda_star(step).lambda_star


def explore_unkilled_max(
    step: StepLaw,
    offspring: OffspringLaw,
    rng: RngContract,
    target_k: int | None = None,
    prune_eps: float = 1e-2,
    frontier_budget: int = 1000,
    frontier_cap: int = 10**6,
    max_expansions: int = 10**7,
    lam: float | None = None,
) -> tuple[int, float]:
    """Maximum displacement over the un-killed tree, with a pruning certificate.

    Frontier nodes at ``s`` are abandoned once ``exp(-lam* (goal - s))`` drops
    below ``prune_eps / frontier_budget``, where ``goal`` is ``target_k`` or one
    above the running maximum.  ``P(M_bar >= k) <= exp(-lam* k)`` applies to
    each abandoned subtree, so the returned bias bound (the sum of those
    terms) bounds the probability that the reported value is too small.
    With ``target_k`` the search stops once ``target_k`` is reached, so the
    reported value is then ``>= target_k`` rather than the exact maximum.
    """
    if max(step.values) <= 0:
        return 0, 0.0
    if lam is None:
        lam = find_lambda_star(step).lambda_star
    sv, sc, ov, oc = _tables(step, offspring)
    log_thr = math.log(prune_eps / frontier_budget) if prune_eps > 0 else -math.inf
    best, bias, status, _ = K.unkilled_max(
        np.uint64(rng.seed), np.uint64(rng.stream), sv, sc, ov, oc,
        lam, int(target_k or 0), log_thr, frontier_cap, max_expansions,
    )
    if status:
        what = "frontier" if status == 1 else "expansion"
        raise BudgetExceeded(f"{what} budget exhausted before the pruning target was met")
    return int(best), float(bias)


def explore_batch(
    step: StepLaw,
    offspring: OffspringLaw,
    trials: int,
    seed: int,
    target_k: int | None = None,
    prune_eps: float = 1e-2,
    frontier_budget: int = 1000,
    frontier_cap: int = 10**6,
    max_expansions: int = 10**7,
    threads: int | None = None,
    start: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    lam = _lam_star_or_none(step)

    def job(t):
        return explore_unkilled_max(step, offspring, RngContract(seed, t), target_k, prune_eps,
                                    frontier_budget, frontier_cap, max_expansions, lam)

    with ThreadPoolExecutor(_workers(threads)) as pool:
        out = list(pool.map(job, range(start, start + trials)))
    m_all = np.array([o[0] for o in out], dtype=np.int64)
    bias = np.array([o[1] for o in out], dtype=np.float64)
    return m_all, bias


@dataclass(frozen=True)
class SpineTrial:
    spine_positions: np.ndarray
    spine_alive: bool
    offspring_counts: np.ndarray
    offspine_max: np.ndarray | None = None


def _hat_table(offspring: OffspringLaw):
    vals, probs = offspring.size_biased()
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    return vals, cdf


def simulate_spine(
    step: StepLaw,
    offspring: OffspringLaw,
    rng: RngContract,
    n: int,
    offspine_budget: int | None = None,
) -> SpineTrial:
    """Spine of length ``n`` in the size-biased tree.

    Spine steps use the ordinary step law; only offspring counts are biased
    (each spine node has ``C_i ~ B^ - 1`` extra children).  With a budget,
    ``offspine_max[i]`` is the largest living displacement above ``S_{v_i}``
    among nodes hanging off ``v_i`` (-1 when ``v_i`` itself is dead).
    """
    if n < 0:
        raise ValueError("spine length must be non-negative")
    sv, sc, ov, oc = _tables(step, offspring)
    hv, hc = _hat_table(offspring)
    alive, pos, extra, keys = K.spine_block(np.uint64(rng.seed), rng.stream, 1, n, sv, sc, hv, hc)
    off = None
    if offspine_budget is not None:
        off = np.full(n + 1, -1, dtype=np.int64)
        for i in range(n + 1):
            if pos[0, i] < 0:
                break
            r = K.offspine_max(keys[0, i], pos[0, i], extra[0, i], sv, sc, ov, oc, offspine_budget)
            if r < 0:
                raise BudgetExceeded(f"off-spine subtree at spine node {i} exceeded {offspine_budget} nodes")
            off[i] = r
    return SpineTrial(pos[0], bool(alive[0]), extra[0], off)


def spine_alive_frequency(
    step: StepLaw, offspring: OffspringLaw, trials: int, seed: int, n: int, threads: int | None = None
) -> tuple[float, np.ndarray]:
    """Fraction of spines of length ``n`` that stay ``>= 0``, and the mean ``C_i``."""
    sv, sc, _, _ = _tables(step, offspring)
    hv, hc = _hat_table(offspring)

    def job(b):
        s, m = b
        alive, _, extra, _ = K.spine_block(np.uint64(seed), s, m, n, sv, sc, hv, hc)
        return int(alive.sum()), extra.sum(axis=0)

    with ThreadPoolExecutor(_workers(threads)) as pool:
        parts = list(pool.map(job, _blocks(trials, BLOCK)))
    hits = sum(p[0] for p in parts)
    extra = np.sum([p[1] for p in parts], axis=0)
    return hits / trials, extra / trials


def spine_batch(
    step: StepLaw, offspring: OffspringLaw, trials: int, seed: int, n: int, threads: int | None = None
) -> dict[str, np.ndarray]:
    """Per-trial spine summaries: alive flag, final and minimum position, total ``C_i``."""
    if n < 0:
        raise ValueError("spine length must be non-negative")
    sv, sc, _, _ = _tables(step, offspring)
    hv, hc = _hat_table(offspring)

    def job(b):
        s, m = b
        alive, pos, extra, _ = K.spine_block(np.uint64(seed), s, m, n, sv, sc, hv, hc)
        return alive, pos[:, -1], pos.min(axis=1), extra.sum(axis=1)

    with ThreadPoolExecutor(_workers(threads)) as pool:
        parts = list(pool.map(job, _blocks(trials, BLOCK)))
    names = ("alive", "final", "min", "extra")
    if not parts:
        return {k: np.zeros(0, bool if k == "alive" else np.int64) for k in names}
    return {k: np.concatenate([p[i] for p in parts]) for i, k in enumerate(names)}


def level_mean_exact(step: StepLaw, offspring: OffspringLaw, n: int, state_cap: int = DEFAULT_STATE_CAP) -> float:
    """``E|L_n| = (E B)^n P(S_i >= 0 for all i <= n)`` by size-biasing and the DP."""
    logp = stay_nonnegative_log_probs(step, n, state_cap)[n]
    if logp == -math.inf:
        return 0.0
    return math.exp(n * math.log(offspring.mean) + logp) if offspring.mean > 0 else float(n == 0)


def level_means_exact(step: StepLaw, offspring: OffspringLaw, horizon: int,
                      state_cap: int = DEFAULT_STATE_CAP) -> np.ndarray:
    """``E|L_n|`` for every ``n = 0..horizon`` from a single DP pass."""
    logp = stay_nonnegative_log_probs(step, horizon, state_cap)
    n = np.arange(horizon + 1)
    return np.exp(n * math.log(offspring.mean) + logp)
