"""Exact constrained-path probabilities for integer random walks.

A :class:`PathQuery` bundles a step law, a per-index barrier profile and a
terminal condition.  :func:`path_probability` evaluates it by a forward
dynamic programme over lattice states; :func:`path_probability_exact`
enumerates every path and is kept deliberately naive so it can serve as
an oracle for the DP.

The DP rescales every layer by its maximum and carries the scale in log
space, so probabilities far below the double-precision range (``2**-2000``
is routine for a walk with negative drift) are still computed to full
relative precision; use :func:`path_log_probability` to read them.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterator

import numpy as np

from .errors import LatticeSpanError, RangeError, StateCapExceeded, TooLargeForOracle
from .model import CriticalityReport, LambdaStar, StepLaw, cumulant, find_lambda_star, tilt

DEFAULT_STATE_CAP = 1_000_000
FLUSH = 1e-300
ORACLE_MAX_N = 24

INF = math.inf
LOG2 = math.log(2.0)


def _floor_seventh_root(m: int) -> int:
    r = int(round(m ** (1.0 / 7.0)))
    while r > 0 and r**7 > m:
        r -= 1
    while (r + 1) ** 7 <= m:
        r += 1
    return r


@dataclass(frozen=True)
class BarrierProfile:
    """Bounds ``lower[i] <= S_i <= upper[i]`` for the interior indices ``0 < i < n``.

    Arrays have length ``n + 1``; entries 0 and ``n`` are always unbounded
    (the endpoint is governed by the terminal condition).  ``inf`` marks an
    absent bound.
    """

    n: int
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    label: str = "free"

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("horizon must be non-negative")
        if len(self.lower) != self.n + 1 or len(self.upper) != self.n + 1:
            raise ValueError("barrier arrays must have length n + 1")
        for lo, hi in zip(self.lower, self.upper):
            if lo > hi:
                raise ValueError(f"empty barrier interval [{lo}, {hi}]")

    @classmethod
    def _build(cls, n, lo, hi, label):
        lower = [-INF] + [lo] * max(n - 1, 0) + ([-INF] if n > 0 else [])
        upper = [INF] + [hi] * max(n - 1, 0) + ([INF] if n > 0 else [])
        return cls(n, tuple(float(v) for v in lower), tuple(float(v) for v in upper), label)

    @classmethod
    def free(cls, n: int) -> "BarrierProfile":
        return cls._build(n, -INF, INF, "free")

    @classmethod
    def one_sided(cls, n: int, m: int) -> "BarrierProfile":
        """``S_i >= -m``."""
        return cls._build(n, -m, INF, f"one_sided:{m}")

    @classmethod
    def corridor(cls, n: int, m: int, top: int) -> "BarrierProfile":
        """``-m <= S_i <= top``."""
        return cls._build(n, -m, top, f"corridor:{m},{top}")

    @classmethod
    def strict_below(cls, n: int, k: int) -> "BarrierProfile":
        """``S_i < k``."""
        return cls._build(n, -INF, k - 1, f"strict_below:{k}")

    @classmethod
    def fnk(cls, n: int, k: int) -> "BarrierProfile":
        """``0 <= S_i < k``."""
        return cls._build(n, 0, k - 1, f"fnk:{k}")

    @classmethod
    def gbt(cls, n: int, k: int, m: int, eps: float = 0.25) -> "BarrierProfile":
        """``-m <= S_i <= max(k, 0) + eps sqrt(n)``."""
        top = math.floor(max(k, 0) + eps * math.sqrt(n))
        return cls._build(n, -m, top, f"gbt:{k},{m},{eps}")

    @classmethod
    def useful(cls, n: int, k: int, m0: int) -> "BarrierProfile":
        """``0 <= S_i < k`` and ``S_{n-m} < k - m**(1/7)`` for every ``m >= m0``.

        On the integers ``s < k - t`` is ``s <= k - floor(t) - 1``.
        """
        base = cls.fnk(n, k)
        upper = list(base.upper)
        for m in range(max(m0, 1), n):
            i = n - m
            upper[i] = min(upper[i], k - _floor_seventh_root(m) - 1)
        lower = list(base.lower)
        label = f"useful:{k},{m0}"
        if any(upper[i] < lower[i] for i in range(1, n)):
            # envelope dips below the floor somewhere: the event is empty
            upper = [max(u, l) for u, l in zip(upper, lower)]
            label += ":empty"
        return cls(n, tuple(lower), tuple(upper), label)

    @property
    def is_empty(self) -> bool:
        return self.label.endswith(":empty")

    def with_pin(self, i: int, j: int) -> "BarrierProfile":
        """Additionally require ``S_i = j`` at an interior index."""
        if not 0 < i < self.n:
            raise RangeError(f"pin index {i} is not interior to horizon {self.n}")
        lower = list(self.lower)
        upper = list(self.upper)
        if not lower[i] <= j <= upper[i]:
            return replace(self, label=f"{self.label}+pin:{i},{j}:empty")
        lower[i] = upper[i] = float(j)
        return BarrierProfile(self.n, tuple(lower), tuple(upper), f"{self.label}+pin:{i},{j}")

    def mirrored(self) -> "BarrierProfile":
        """Bounds for ``-S``."""
        return BarrierProfile(
            self.n,
            tuple(-u for u in self.upper),
            tuple(-l for l in self.lower),
            f"mirror({self.label})",
        )

    def admits(self, path) -> bool:
        for i in range(1, self.n):
            if not self.lower[i] <= path[i] <= self.upper[i]:
                return False
        return True


@dataclass(frozen=True)
class TerminalCondition:
    """Condition on ``S_n``: ``eq``, ``ge``, ``le``, ``in`` (a finite set) or ``any``."""

    kind: str
    values: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in ("eq", "ge", "le", "in", "any"):
            raise ValueError(f"unknown terminal kind {self.kind!r}")
        if self.kind in ("eq", "ge", "le") and len(self.values) != 1:
            raise ValueError(f"terminal {self.kind} takes exactly one value")
        if self.kind == "in" and not self.values:
            raise ValueError("terminal set must be non-empty")

    @classmethod
    def equals(cls, k: int) -> "TerminalCondition":
        return cls("eq", (int(k),))

    @classmethod
    def at_least(cls, k: int) -> "TerminalCondition":
        return cls("ge", (int(k),))

    @classmethod
    def at_most(cls, k: int) -> "TerminalCondition":
        return cls("le", (int(k),))

    @classmethod
    def in_set(cls, values) -> "TerminalCondition":
        return cls("in", tuple(sorted({int(v) for v in values})))

    @classmethod
    def anything(cls) -> "TerminalCondition":
        return cls("any")

    def mask(self, states: np.ndarray) -> np.ndarray:
        if self.kind == "eq":
            return states == self.values[0]
        if self.kind == "ge":
            return states >= self.values[0]
        if self.kind == "le":
            return states <= self.values[0]
        if self.kind == "in":
            return np.isin(states, self.values)
        return np.ones(states.shape, dtype=bool)

    def admits(self, s: int) -> bool:
        return bool(self.mask(np.array([s]))[0])

    def bounds(self) -> tuple[float, float]:
        if self.kind == "eq":
            return self.values[0], self.values[0]
        if self.kind == "ge":
            return self.values[0], INF
        if self.kind == "le":
            return -INF, self.values[0]
        if self.kind == "in":
            return self.values[0], self.values[-1]
        return -INF, INF

    def mirrored(self) -> "TerminalCondition":
        if self.kind == "eq":
            return TerminalCondition.equals(-self.values[0])
        if self.kind == "in":
            return TerminalCondition.in_set(-v for v in self.values)
        if self.kind == "ge":
            return TerminalCondition.at_most(-self.values[0])
        if self.kind == "le":
            return TerminalCondition.at_least(-self.values[0])
        return self


@dataclass(frozen=True)
class PathQuery:
    step: StepLaw
    profile: BarrierProfile
    terminal: TerminalCondition = field(default_factory=TerminalCondition.anything)

    def __post_init__(self):
        if self.step.span != 1:
            raise LatticeSpanError(f"step law has lattice span {self.step.span}; span 1 is required")

    @property
    def n(self) -> int:
        return self.profile.n

    def mirrored(self) -> "PathQuery":
        return PathQuery(self.step.negated(), self.profile.mirrored(), self.terminal.mirrored())

    def reversed(self) -> "PathQuery":
        """The same event read along ``R_i = S_{n-i} - S_n`` (steps ``-X``)."""
        if self.terminal.kind != "eq":
            raise ValueError("time reversal needs an eq terminal")
        k = self.terminal.values[0]
        n = self.n
        lower = [-INF] * (n + 1)
        upper = [INF] * (n + 1)
        for i in range(1, n):
            lower[i] = self.profile.lower[n - i] - k
            upper[i] = self.profile.upper[n - i] - k
        prof = BarrierProfile(n, tuple(lower), tuple(upper), f"reverse({self.profile.label})")
        return PathQuery(self.step.negated(), prof, TerminalCondition.equals(-k))


@dataclass(frozen=True)
class PathResult:
    log_probability: float
    underflow_count: int

    @property
    def probability(self) -> float:
        return math.exp(self.log_probability) if self.log_probability > -INF else 0.0


def _layers(
    values: np.ndarray,
    probs: np.ndarray,
    profile: BarrierProfile,
    terminal: TerminalCondition | None,
    state_cap: int,
    counter: list,
) -> Iterator[tuple[int, int, np.ndarray, float]]:
    """Yield ``(i, lo, weights, log_scale)`` after each layer ``i = 0..n``.

    ``weights[j] * exp(log_scale)`` is the probability of being at
    ``lo + j`` at time ``i`` having respected every bound so far.  States
    that can no longer reach the terminal set are dropped.
    """
    n = profile.n
    xmin, xmax = int(values.min()), int(values.max())
    tlo, thi = terminal.bounds() if terminal is not None else (-INF, INF)
    lo, arr, log_scale, exp2 = 0, np.ones(1), 0.0, 0
    yield 0, lo, arr, log_scale
    order = np.argsort(np.abs(probs))
    values, probs = values[order], probs[order]
    for i in range(1, n + 1):
        new_lo = lo + xmin
        new_hi = lo + len(arr) - 1 + xmax
        rest = n - i
        cut_lo = max(profile.lower[i], tlo - rest * xmax)
        cut_hi = min(profile.upper[i], thi - rest * xmin)
        if i == n and terminal is not None and terminal.kind != "any":
            cut_lo, cut_hi = max(cut_lo, tlo), min(cut_hi, thi)
        a = int(max(new_lo, math.ceil(cut_lo))) if cut_lo > -INF else new_lo
        b = int(min(new_hi, math.floor(cut_hi))) if cut_hi < INF else new_hi
        if b < a:
            yield i, a, np.zeros(0), -INF
            return
        width = b - a + 1
        if width > state_cap:
            raise StateCapExceeded(f"layer {i} needs {width} states (cap {state_cap})")
        # new[s] = sum_x p_x old[s - x], Neumaier-compensated over x
        total = np.zeros(width)
        comp = np.zeros(width)
        old_hi = lo + len(arr) - 1
        for x, p in zip(values, probs):
            s0 = max(a, lo + x)
            s1 = min(b, old_hi + x)
            if s1 < s0:
                continue
            term = np.zeros(width)
            term[s0 - a : s1 - a + 1] = p * arr[s0 - x - lo : s1 - x - lo + 1]
            t = total + term
            big = np.abs(total) >= np.abs(term)
            comp += np.where(big, (total - t) + term, (term - t) + total)
            total = t
        total += comp
        peak = total.max()
        if not peak > 0.0:
            yield i, a, np.zeros(0), -INF
            return
        # rescale by an exact power of two so the running scale stays exact
        shift = math.frexp(peak)[1]
        total = np.ldexp(total, -shift)
        exp2 += shift
        log_scale = exp2 * LOG2
        tiny = (total > 0.0) & (total < FLUSH)
        if tiny.any():
            counter[0] += int(tiny.sum())
            total[tiny] = 0.0
        nz = np.flatnonzero(total)
        arr = total[nz[0] : nz[-1] + 1]
        lo = a + int(nz[0])
        yield i, lo, arr, log_scale


def _log_weighted_sum(arr: np.ndarray, log_w: np.ndarray) -> float:
    keep = arr > 0
    if not keep.any():
        return -INF
    terms = np.log(arr[keep]) + log_w[keep]
    top = terms.max()
    return top + math.log(math.fsum(np.exp(terms - top)))


def _run(values, probs, profile, terminal, state_cap, log_weight=None) -> PathResult:
    if profile.is_empty:
        return PathResult(-INF, 0)
    counter = [0]
    last = None
    for last in _layers(values, probs, profile, terminal, state_cap, counter):
        pass
    _, lo, arr, log_scale = last
    if log_scale == -INF or arr.size == 0:
        return PathResult(-INF, counter[0])
    states = lo + np.arange(arr.size)
    mask = terminal.mask(states)
    if not mask.any():
        return PathResult(-INF, counter[0])
    log_w = np.zeros(arr.size) if log_weight is None else log_weight(states)
    log_w = np.where(mask, log_w, -INF)
    return PathResult(log_scale + _log_weighted_sum(np.where(mask, arr, 0.0), log_w), counter[0])


def path_result(q: PathQuery, state_cap: int = DEFAULT_STATE_CAP) -> PathResult:
    return _run(q.step.x, q.step.p, q.profile, q.terminal, state_cap)


def path_probability(q: PathQuery, state_cap: int = DEFAULT_STATE_CAP) -> float:
    """``P(S respects the profile and S_n satisfies the terminal)`` by forward DP."""
    return path_result(q, state_cap).probability


def path_log_probability(q: PathQuery, state_cap: int = DEFAULT_STATE_CAP) -> float:
    return path_result(q, state_cap).log_probability


def _lambda_point(source, step: StepLaw) -> tuple[float, float, float]:
    """(lambda, Lambda(lambda), Lambda'(lambda)) from a report, a root or a number."""
    if source is None:
        source = find_lambda_star(step)
    if isinstance(source, (CriticalityReport, LambdaStar)):
        lam = source.lambda_star
    else:
        lam = float(source)
    c = cumulant(step, lam)
    return lam, c.value, c.slope


def tilted_path_result(q: PathQuery, report=None, state_cap: int = DEFAULT_STATE_CAP) -> PathResult:
    """Evaluate ``q`` under the tilted law and undo the change of measure.

    With ``Y`` the tilted walk and ``c = Lambda'(lam)``,
    ``P(S in B) = exp(-n f(lam)) E[exp(-lam (Y_n - n c)) 1{Y in B}]``.
    """
    lam, value, slope = _lambda_point(report, q.step)
    tilted = tilt(q.step, lam)
    f = lam * slope - value
    n = q.n
    res = _run(
        q.step.x,
        np.asarray(tilted.probs),
        q.profile,
        q.terminal,
        state_cap,
        log_weight=lambda s: -lam * (s - n * slope),
    )
    if res.log_probability == -INF:
        return res
    return PathResult(res.log_probability - n * f, res.underflow_count)


def tilted_path_probability(q: PathQuery, report=None, state_cap: int = DEFAULT_STATE_CAP) -> float:
    return tilted_path_result(q, report, state_cap).probability


def stay_nonnegative_log_probs(step: StepLaw, horizon: int, state_cap: int = DEFAULT_STATE_CAP) -> np.ndarray:
    """``log P(S_i >= 0 for all i <= n)`` for every ``n = 0..horizon``."""
    if step.span != 1:
        raise LatticeSpanError(f"step law has lattice span {step.span}; span 1 is required")
    n = horizon + 1
    lower = (-INF,) + (0.0,) * n
    upper = (INF,) * (n + 1)
    prof = BarrierProfile(n, lower, upper, "one_sided:0")
    out = np.full(horizon + 1, -INF)
    counter = [0]
    for i, lo, arr, log_scale in _layers(step.x, step.p, prof, None, state_cap, counter):
        if i > horizon or arr.size == 0:
            break
        out[i] = log_scale + math.log(math.fsum(arr))
    return out


def path_probability_exact(q: PathQuery, max_n: int = ORACLE_MAX_N):
    """Brute-force sum over every path in ``support**n``.

    Returns a :class:`Fraction` when the step law carries exact rational
    probabilities and a float otherwise.
    """
    n = q.n
    if n > max_n:
        raise TooLargeForOracle(f"horizon {n} exceeds the oracle limit {max_n}")
    values = q.step.values
    k = len(values)
    counts: Counter = Counter()
    for path in itertools.product(range(k), repeat=n):
        s = 0
        ok = True
        for i, idx in enumerate(path[:-1] if n else (), start=1):
            s += values[idx]
            if not q.profile.lower[i] <= s <= q.profile.upper[i]:
                ok = False
                break
        if not ok:
            continue
        if n:
            s += values[path[-1]]
        if not q.terminal.admits(s):
            continue
        exps = [0] * k
        for idx in path:
            exps[idx] += 1
        counts[tuple(exps)] += 1
    if q.step.exact is not None:
        total = Fraction(0)
        for exps, c in counts.items():
            term = Fraction(c)
            for p, e in zip(q.step.exact, exps):
                term *= p**e
            total += term
        return total
    return math.fsum(c * math.prod(p**e for p, e in zip(q.step.probs, exps)) for exps, c in counts.items())


def chernoff_bound(source, n: int, a: float, lam: float | None = None) -> float:
    """``exp(-n f(lam) - a lam)``, bounding ``P(S_n >= Lambda'(lam) n + a)``.

    ``source`` is a :class:`StepLaw` (``lam`` defaults to ``lambda*``) or a
    report carrying ``lambda_star`` and ``f_star``.
    """
    if isinstance(source, StepLaw):
        lam_, value, slope = _lambda_point(lam, source)
        f = lam_ * slope - value
    else:
        lam_, f = source.lambda_star, source.f_star
    if lam_ <= 0:
        raise RangeError("the Chernoff bound needs lambda > 0")
    return math.exp(-n * f - a * lam_)


def bahadur_rao_scale(report, n: int, a: int, c: float = 3.0) -> float:
    """``exp(-a lam* - n f(lam*)) / sqrt(2 pi n Lambda''(lam*))``; constant factor unknown."""
    if n < 1:
        raise RangeError("n must be positive")
    if abs(a) > c * math.sqrt(n):
        raise RangeError(f"|a| = {abs(a)} exceeds {c} sqrt(n)")
    lam = report.lambda_star
    return math.exp(-a * lam - n * report.f_star) / math.sqrt(report.variance_at_tilt * 2.0 * math.pi * n)


def ballot_asymptotic(kind: str, n: int, k: int, m: int = 0, j: int | None = None, c: float = 4.0) -> float:
    """Order-of-magnitude formula for a constrained zero-drift walk event.

    ``mean0``/``gbt``: ``(m+1)(k+m+1) / n**1.5``; ``fnk``/``gnk``:
    ``(k+1) / n**2``; ``fnkstrong``: ``(m+1)(k+m+1) / n**2``; ``fnksmj``
    (pinned ``S_m = j``): ``(j+1)**2 (k+1) / (m**1.5 (n-m)**2)``.
    """
    if n < 1:
        raise RangeError("n must be positive")
    root = math.sqrt(n)
    if kind in ("mean0", "gbt"):
        lo_k = -m if kind == "gbt" else 1
        if not (lo_k <= k <= c * root and 0 <= m <= c * root):
            raise RangeError(f"({kind}) needs {lo_k} <= k <= c sqrt(n), 0 <= m <= c sqrt(n)")
        return (m + 1) * (k + m + 1) / n**1.5
    if not (1.0 / c <= k / root <= c):
        raise RangeError(f"({kind}) needs 1/c <= k/sqrt(n) <= c")
    if kind in ("fnk", "gnk"):
        return (k + 1) / n**2
    if kind == "fnkstrong":
        if not 0 <= m <= c * root:
            raise RangeError("(fnkstrong) needs 0 <= m <= c sqrt(n)")
        return (m + 1) * (k + m + 1) / n**2
    if kind == "fnksmj":
        if j is None or not (1 <= m <= n / 2) or j > min(math.sqrt(m), k / 2):
            raise RangeError("(fnksmj) needs 1 <= m <= n/2 and j <= min(sqrt(m), k/2)")
        return (j + 1) ** 2 * (k + 1) / (m**1.5 * (n - m) ** 2)
    raise RangeError(f"unknown ballot kind {kind!r}")
