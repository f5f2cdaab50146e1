"""Desk-scale experiments on the total progeny ``Z`` and the maximum ``M``.

Each experiment either runs its own simulation or accepts a ready
:class:`~krillwalk.engine.TrialBatch`, so one large batch can feed the
progeny tail, the maximum tail and the ``Z log Z`` trend at once.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .engine import DEFAULT_MAX_NODES, TrialBatch, level_means_exact, simulate_batch
from .errors import PowerError, SupercriticalDivergence, ThresholdBeyondCensoring
from .model import OffspringLaw, StepLaw, classify, find_lambda_star

__all__ = [
    "TailTable",
    "SeriesReport",
    "ez_series",
    "z_tail",
    "m_tail",
    "zlogz_trend",
    "max_profile",
    "z_mean_bracket",
    "log_slope",
]


def _wilson(hits: int, trials: int) -> tuple[float, float]:
    if trials == 0:
        return 0.0, 1.0
    ci = stats.binomtest(int(hits), int(trials)).proportion_ci(confidence_level=0.95, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass
class TailTable:
    """Rows of tail estimates; ``compensator`` rescales the estimate by its predicted decay."""

    kind: str
    trials: int
    rows: list[dict] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def row(self, threshold) -> dict:
        for r in self.rows:
            if r["threshold"] == threshold:
                return r
        raise KeyError(threshold)

    def to_csv(self) -> str:
        buf = io.StringIO()
        if not self.rows:
            return ""
        writer = csv.DictWriter(buf, fieldnames=list(self.rows[0]), lineterminator="\n")
        writer.writeheader()
        for r in self.rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"kind": self.kind, "trials": self.trials, "rows": self.rows}

    def monotone_violations(self, column: str = "estimate") -> int:
        """Soft diagnostic: rows where the estimate rises beyond its standard errors."""
        est = self.column(column)
        se = self.column("se")
        return int(np.sum(np.diff(est) > 2 * (se[1:] + se[:-1])))


@dataclass
class SeriesReport:
    terms: np.ndarray
    partial_sums: np.ndarray
    slope: float
    tail_completion: float
    completion_uncertainty: float
    total: float

    def to_dict(self) -> dict:
        return {
            "N": int(self.terms.size - 1),
            "slope": self.slope,
            "tail_completion": self.tail_completion,
            "completion_uncertainty": self.completion_uncertainty,
            "total": self.total,
            "partial_sum": float(self.partial_sums[-1]),
            "first_terms": [float(t) for t in self.terms[:10]],
        }


def log_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0)
    if keep.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)[0])


def ez_series(step: StepLaw, offspring: OffspringLaw, N: int, fit_from: int | None = None) -> SeriesReport:
    """``E Z = sum_n (E B)^n P(S_i >= 0, i <= n)`` with an ``n**-1.5`` tail beyond ``N``.

    The tail constant is the mean of ``term_n n**1.5`` over the last tenth of
    the terms, which averages out lattice periodicity.  The uncertainty is
    the change in the completion when the fitted slope replaces -3/2.
    """
    if offspring.mean > 1.0 and max(step.values) > 0 and step.mean < 0:
        if classify(step, offspring).verdict == "supercritical":
            raise SupercriticalDivergence("E Z is infinite for a supercritical configuration")
    terms = level_means_exact(step, offspring, N)
    partial = np.cumsum(terms)
    if N < 10:
        return SeriesReport(terms, partial, math.nan, 0.0, 0.0, float(partial[-1]))
    lo = fit_from if fit_from is not None else max(1, N // 10)
    n = np.arange(lo, N + 1)
    slope = log_slope(n, terms[lo:])
    tail_n = np.arange(max(1, N - N // 10), N + 1)
    const = float(np.mean(terms[tail_n] * tail_n**1.5))
    completion = const * float(special.zeta(1.5, N + 1))
    if slope < -1.0:
        c_fit = float(np.mean(terms[tail_n] * tail_n ** (-slope)))
        alt = c_fit * float(special.zeta(-slope, N + 1))
        uncertainty = abs(alt - completion)
    else:
        uncertainty = math.inf
    return SeriesReport(terms, partial, slope, completion, uncertainty, float(partial[-1]) + completion)


def _batch(step, offspring, trials, seed, max_nodes, threads, batch):
    if batch is not None:
        return batch
    return simulate_batch(step, offspring, trials, seed, max_nodes=max_nodes, threads=threads)


def z_tail(
    step: StepLaw,
    offspring: OffspringLaw,
    trials: int,
    thresholds,
    seed: int,
    max_nodes: int = DEFAULT_MAX_NODES,
    threads: int | None = None,
    batch: TrialBatch | None = None,
) -> TailTable:
    """Survival ``P(Z > n)`` with compensator ``n log(n)**2 P(Z > n)``.

    Truncated trials are known to have ``Z > max_nodes``, so they count as
    exceedances for every threshold up to ``max_nodes``; larger thresholds
    are refused.
    """
    thresholds = [int(t) for t in thresholds]
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be strictly increasing")
    cap = batch.max_nodes if batch is not None else max_nodes
    if thresholds and thresholds[-1] > cap:
        raise ThresholdBeyondCensoring(f"threshold {thresholds[-1]} exceeds the censoring level {cap}")
    b = _batch(step, offspring, trials, seed, max_nodes, threads, batch)
    z = np.sort(b.z)
    t = b.trials
    censored = float(b.truncated.mean()) if t else 0.0
    table = TailTable("z", t)
    for n in thresholds:
        hits = int(t - np.searchsorted(z, n, side="right"))
        est = hits / t if t else math.nan
        lo, hi = _wilson(hits, t)
        comp = n * math.log(n) ** 2 * est if n > 1 else math.nan
        table.rows.append({
            "threshold": n,
            "hits": hits,
            "estimate": est,
            "se": math.sqrt(est * (1 - est) / t) if t else math.nan,
            "wilson_low": lo,
            "wilson_high": hi,
            "censored_fraction": censored,
            "compensator": comp,
        })
    return table


def m_tail(
    step: StepLaw,
    offspring: OffspringLaw,
    trials: int,
    k_max: int,
    seed: int,
    max_nodes: int = DEFAULT_MAX_NODES,
    threads: int | None = None,
    batch: TrialBatch | None = None,
) -> TailTable:
    """``P(M >= k)`` and ``P(M = k)`` with their ``exp(lam* k)`` compensators."""
    lam = find_lambda_star(step).lambda_star
    t = batch.trials if batch is not None else trials
    if math.exp(-lam * k_max) < 50.0 / max(t, 1):
        raise PowerError(f"P(M >= {k_max}) ~ {math.exp(-lam * k_max):.2e} is out of reach with {t} trials")
    b = _batch(step, offspring, trials, seed, max_nodes, threads, batch)
    m = b.m_living
    counts = np.bincount(m, minlength=k_max + 2)
    at_least = counts[::-1].cumsum()[::-1]
    table = TailTable("m", t)
    for k in range(k_max + 1):
        p_ge = at_least[k] / t
        p_eq = counts[k] / t
        se_ge = math.sqrt(p_ge * (1 - p_ge) / t)
        se_eq = math.sqrt(p_eq * (1 - p_eq) / t)
        lo, hi = _wilson(int(at_least[k]), t)
        table.rows.append({
            "threshold": k,
            "estimate": p_ge,
            "se": se_ge,
            "wilson_low": lo,
            "wilson_high": hi,
            "point": p_eq,
            "point_se": se_eq,
            "censored_fraction": float(b.truncated.mean()),
            "compensator": math.exp(lam * k) * p_ge,
            "compensator_upper_check": math.exp(lam * k) * (p_ge - 3 * se_ge),
            "point_compensator": k * math.exp(lam * k) * p_eq,
            "point_compensator_se": k * math.exp(lam * k) * se_eq,
        })
    return table


def zlogz_trend(
    step: StepLaw,
    offspring: OffspringLaw,
    schedule,
    seed: int,
    max_nodes: int = DEFAULT_MAX_NODES,
    threads: int | None = None,
    batch: TrialBatch | None = None,
    replicates: int = 1,
) -> list[tuple[int, float]]:
    """Running means of ``Z log Z`` over nested prefixes of a trial stream.

    A truncated trial contributes ``max_nodes log(max_nodes)``, so every
    mean is a lower bound.  With ``replicates = R > 1`` the trial range is
    cut into ``R`` disjoint streams of ``max(schedule)`` trials each and the
    value reported for size ``s`` is the median over streams of the mean of
    the first ``s`` trials.  A single stream is dominated by its largest
    tree, which makes the plain running mean jump around; the median is
    far steadier while keeping the same divergent centre.
    """
    schedule = [int(s) for s in schedule]
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("schedule must be strictly increasing")
    if replicates < 1:
        raise ValueError("replicates must be positive")
    top = schedule[-1]
    idx = np.array(schedule) - 1
    if batch is not None:
        if batch.trials < top * replicates:
            raise ValueError(f"batch holds {batch.trials} trials, {top * replicates} needed")
        streams = (batch.z[r * top:(r + 1) * top] for r in range(replicates))
    else:
        # one stream at a time keeps memory at a single stream's worth
        streams = (simulate_batch(step, offspring, top, seed, max_nodes=max_nodes, threads=threads,
                                  start=r * top).z for r in range(replicates))
    means = []
    for z in streams:
        z = z.astype(np.float64)
        means.append(np.cumsum(z * np.log(z))[idx] / (idx + 1))
    med = np.median(np.array(means), axis=0)
    return [(s, float(v)) for s, v in zip(schedule, med)]


def max_profile(
    step: StepLaw,
    offspring: OffspringLaw,
    trials: int,
    seed: int,
    max_nodes: int = DEFAULT_MAX_NODES,
    threads: int | None = None,
    batch: TrialBatch | None = None,
) -> dict:
    """Joint law of ``M`` and the first generation attaining it.

    ``unique`` is the share of trials where a single particle first (in
    generation order) reaches the maximum; ``window`` the share of trials
    with ``M = k`` that first reach it in a generation within
    ``[k**2 / 4, 4 k**2]``.
    """
    b = _batch(step, offspring, trials, seed, max_nodes, threads, batch)
    m = b.m_living
    gen = b.max_generation
    unique = b.max_multiplicity == 1
    out = {"trials": b.trials, "by_k": {}}
    for k in range(int(m.max()) + 1 if m.size else 0):
        sel = m == k
        cnt = int(sel.sum())
        if cnt == 0:
            continue
        g = gen[sel]
        inside = (g >= k * k / 4) & (g <= 4 * k * k)
        out["by_k"][k] = {
            "count": cnt,
            "probability": cnt / b.trials,
            "unique": float(unique[sel].mean()),
            "window": float(inside.mean()),
            "generation_counts": {int(v): int(c) for v, c in zip(*np.unique(g, return_counts=True))},
        }
    return out


def z_mean_bracket(batch: TrialBatch) -> dict:
    """MC mean of ``Z`` bracketed against censoring and the unseen heavy tail.

    ``lower`` is the mean of ``min(Z, max_nodes)``.  ``upper`` treats every
    value above a reference level ``r`` as censored: it is the mean of
    ``min(Z, r)`` plus ``c_hi / log(r)``, the integral of a tail
    ``c_hi / (n log(n)**2)`` beyond ``r``.  ``r`` is the largest power of ten
    with at least 100 exceedances and ``c_hi`` the largest upper Wilson
    limit of the compensator ``n log(n)**2 P(Z > n)`` over powers of ten
    ``>= r`` that still have 10 exceedances.  ``Z`` has infinite variance
    at criticality, so the plain sample mean sits below ``E Z`` by roughly
    the mass of the tail the sample cannot reach; ``se`` is the naive
    standard error of ``lower``.
    """
    z = batch.z
    t = batch.trials
    cap = batch.max_nodes
    lower = float(z.mean())
    se = float(z.std(ddof=1) / math.sqrt(t))
    levels = []
    r = 10
    while r <= cap:
        levels.append((r, int((z > r).sum())))
        r *= 10
    ref = max([r for r, h in levels if h >= 100], default=10)
    c_hi = 0.0
    for r, h in levels:
        if r >= ref and h >= 10:
            c_hi = max(c_hi, r * math.log(r) ** 2 * _wilson(h, t)[1])
    body = np.minimum(z, ref)
    upper = float(body.mean()) + c_hi / math.log(ref)
    se_upper = float(body.std(ddof=1) / math.sqrt(t))
    return {"lower": lower, "upper": upper, "se": se, "se_upper": se_upper, "reference": ref,
            "compensator_high": c_hi, "censored": int(batch.truncated.sum()), "trials": t}
