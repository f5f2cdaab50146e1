"""Step and offspring laws, cumulant generating function, criticality.

Everything here works with finite-support laws: the step ``X`` lives on a
finite subset of the integers, and the offspring count ``B`` is always a
finite table (Poisson and geometric laws are truncated and renormalised).
This keeps ``log E exp(lam X)`` finite for every real ``lam``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce
from typing import NamedTuple, Sequence

import numpy as np
from scipy import stats

from .errors import LawError, NoBracket, NotWellControlled, SpecSyntaxError

PROB_TOL = 1e-12
CRITICAL_BAND = 1e-9
TRUNCATION_MASS = 1e-12

__all__ = [
    "StepLaw",
    "OffspringLaw",
    "Cumulant",
    "LambdaStar",
    "CriticalityReport",
    "TiltedStepLaw",
    "cumulant",
    "find_lambda_star",
    "classify",
    "tilt",
    "pemantle_law",
    "critical_plusminus_p",
]


def _parse_prob(text: str) -> Fraction:
    try:
        return Fraction(text.strip())
    except (ValueError, ZeroDivisionError) as exc:
        raise SpecSyntaxError(f"cannot parse probability {text!r}") from exc


@dataclass(frozen=True)
class StepLaw:
    """Finite-support distribution of the integer step ``X``.

    ``exact`` optionally carries the probabilities as :class:`Fraction`
    objects; laws parsed from text always have it, so the enumeration
    oracle can work in rational arithmetic.
    """

    values: tuple[int, ...]
    probs: tuple[float, ...]
    exact: tuple[Fraction, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.values) == 0 or len(self.values) != len(self.probs):
            raise LawError("step law needs matching, non-empty values and probs")
        if len(set(self.values)) != len(self.values):
            raise LawError(f"step values are not distinct: {self.values}")
        for v in self.values:
            if int(v) != v:
                raise LawError(f"step value {v!r} is not an integer")
        if any(not (p > 0.0) or not math.isfinite(p) for p in self.probs):
            raise LawError(f"step probabilities must be positive: {self.probs}")
        total = math.fsum(self.probs)
        if abs(total - 1.0) > PROB_TOL:
            raise LawError(f"step probabilities sum to {total:.12g}, not 1")
        if self.exact is not None and sum(self.exact) != 1:
            raise LawError(f"step probabilities sum to {float(sum(self.exact)):.12g}, not 1")
        order = sorted(range(len(self.values)), key=lambda i: self.values[i])
        object.__setattr__(self, "values", tuple(int(self.values[i]) for i in order))
        object.__setattr__(self, "probs", tuple(float(self.probs[i]) for i in order))
        if self.exact is not None:
            object.__setattr__(self, "exact", tuple(self.exact[i] for i in order))

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[int, float]]) -> "StepLaw":
        values = [int(v) for v, _ in pairs]
        probs = [p for _, p in pairs]
        exact = None
        if all(isinstance(p, (Fraction, int)) for p in probs):
            exact = tuple(Fraction(p) for p in probs)
        return cls(tuple(values), tuple(float(p) for p in probs), exact)

    @classmethod
    def from_spec(cls, spec: str) -> "StepLaw":
        """Parse ``"-1:0.9330127,1:0.0669873"``."""
        pairs = []
        for item in spec.split(","):
            item = item.strip()
            if not item:
                continue
            head, sep, tail = item.rpartition(":")
            if not sep or not head:
                raise SpecSyntaxError(f"malformed step entry {item!r}; expected value:prob")
            try:
                value = int(head)
            except ValueError as exc:
                raise SpecSyntaxError(f"step value {head!r} is not an integer") from exc
            pairs.append((value, _parse_prob(tail)))
        if not pairs:
            raise SpecSyntaxError("empty step law")
        return cls.from_pairs(pairs)

    def to_spec(self) -> str:
        if self.exact is not None:
            return ",".join(f"{v}:{p}" for v, p in zip(self.values, self.exact))
        return ",".join(f"{v}:{p!r}" for v, p in zip(self.values, self.probs))

    @property
    def x(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.int64)

    @property
    def p(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=np.float64)

    @property
    def mean(self) -> float:
        return math.fsum(v * p for v, p in zip(self.values, self.probs))

    @property
    def variance(self) -> float:
        mu = self.mean
        return math.fsum((v - mu) ** 2 * p for v, p in zip(self.values, self.probs))

    @property
    def third_abs_moment(self) -> float:
        return math.fsum(abs(v) ** 3 * p for v, p in zip(self.values, self.probs))

    @property
    def span(self) -> int:
        """gcd of the support values; 1 means the walk generates all of Z."""
        return reduce(math.gcd, (abs(v) for v in self.values))

    def negated(self) -> "StepLaw":
        exact = None if self.exact is None else self.exact
        return StepLaw(tuple(-v for v in self.values), self.probs, exact)


def pemantle_law(p: float | None = None) -> StepLaw:
    """The +-1 step law with ``P(X=1) = p``; defaults to the critical value for B=2."""
    if p is None:
        p = (2.0 - math.sqrt(3.0)) / 4.0
    if not 0.0 < p < 1.0:
        raise LawError(f"p must lie in (0, 1), got {p}")
    return StepLaw((-1, 1), (1.0 - p, p))


def critical_plusminus_p(mean_offspring: float) -> float:
    """Exactly critical ``P(X=1)`` for the +-1 family: ``4 p (1-p) (E B)^2 = 1``."""
    if mean_offspring <= 1.0:
        raise LawError("criticality needs E B > 1")
    d = 1.0 - 1.0 / mean_offspring**2
    # (1 - sqrt(d)) / 2 without cancellation
    return 0.5 * (1.0 - d) / (1.0 + math.sqrt(d))


@dataclass(frozen=True)
class OffspringLaw:
    """Offspring count ``B`` as a finite table, whatever its declared kind."""

    kind: str
    param: str
    values: tuple[int, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) == 0 or len(self.values) != len(self.probs):
            raise LawError("offspring law needs matching, non-empty values and probs")
        if any(v < 0 for v in self.values) or len(set(self.values)) != len(self.values):
            raise LawError(f"offspring values must be distinct non-negative integers: {self.values}")
        if any(not (p > 0.0) for p in self.probs):
            raise LawError("offspring probabilities must be positive")
        total = math.fsum(self.probs)
        if abs(total - 1.0) > PROB_TOL:
            raise LawError(f"offspring probabilities sum to {total:.12g}, not 1")

    @classmethod
    def constant(cls, k: int) -> "OffspringLaw":
        return cls("const", str(int(k)), (int(k),), (1.0,))

    @classmethod
    def table(cls, pairs: Sequence[tuple[int, float]]) -> "OffspringLaw":
        values = tuple(int(v) for v, _ in pairs)
        probs = tuple(float(p) for _, p in pairs)
        param = ",".join(f"{v}:{p}" for v, p in pairs)
        return cls("table", param, values, probs)

    @classmethod
    def geometric(cls, q: float) -> "OffspringLaw":
        """``P(B=k) = q (1-q)^k`` for ``k >= 0``, truncated at the 1 - 1e-12 quantile."""
        if not 0.0 < q < 1.0:
            raise LawError(f"geometric parameter must lie in (0, 1), got {q}")
        kmax = int(stats.geom.ppf(1.0 - TRUNCATION_MASS, q)) - 1
        k = np.arange(kmax + 1)
        pmf = q * (1.0 - q) ** k
        return cls._truncated("geom", repr(q), k, pmf)

    @classmethod
    def poisson(cls, mu: float) -> "OffspringLaw":
        if not mu > 0.0:
            raise LawError(f"poisson mean must be positive, got {mu}")
        kmax = int(stats.poisson.ppf(1.0 - TRUNCATION_MASS, mu))
        k = np.arange(kmax + 1)
        pmf = stats.poisson.pmf(k, mu)
        return cls._truncated("poisson", repr(mu), k, pmf)

    @classmethod
    def _truncated(cls, kind, param, k, pmf):
        keep = pmf > 0
        k, pmf = k[keep], pmf[keep]
        pmf = pmf / math.fsum(pmf)
        return cls(kind, param, tuple(int(v) for v in k), tuple(float(p) for p in pmf))

    @classmethod
    def from_spec(cls, spec: str) -> "OffspringLaw":
        """Parse ``const:2``, ``table:0:0.2,2:0.8``, ``geom:0.4`` or ``poisson:1.5``."""
        kind, sep, rest = spec.strip().partition(":")
        if not sep:
            raise SpecSyntaxError(f"malformed offspring spec {spec!r}")
        try:
            if kind == "const":
                return cls.constant(int(rest))
            if kind == "geom":
                return cls.geometric(float(rest))
            if kind == "poisson":
                return cls.poisson(float(rest))
            if kind == "table":
                pairs = []
                for item in rest.split(","):
                    v, _, p = item.partition(":")
                    pairs.append((int(v), float(_parse_prob(p))))
                return cls.table(pairs)
        except ValueError as exc:
            if isinstance(exc, LawError):
                raise
            raise SpecSyntaxError(f"malformed offspring spec {spec!r}: {exc}") from exc
        raise SpecSyntaxError(f"unknown offspring kind {kind!r}")

    def to_spec(self) -> str:
        return f"{self.kind}:{self.param}"

    @property
    def mean(self) -> float:
        return math.fsum(v * p for v, p in zip(self.values, self.probs))

    @property
    def log_mean(self) -> float:
        return math.log(self.mean)

    def size_biased(self) -> tuple[np.ndarray, np.ndarray]:
        """Support and probabilities of ``B^`` with ``P(B^=k) = k P(B=k) / E B``."""
        mean = self.mean
        if mean <= 0:
            raise LawError("size-biasing needs E B > 0")
        pairs = [(v, v * p / mean) for v, p in zip(self.values, self.probs) if v > 0]
        values = np.array([v for v, _ in pairs], dtype=np.int64)
        probs = np.array([q for _, q in pairs])
        return values, probs

    def b_log8_moment(self) -> float:
        """``E[B log^8 B]``; finite for every finite table."""
        return math.fsum(v * math.log(v) ** 8 * p for v, p in zip(self.values, self.probs) if v > 1)


class Cumulant(NamedTuple):
    value: float
    slope: float
    curvature: float


def cumulant(law: StepLaw, lam: float) -> Cumulant:
    """``Lambda(lam) = log E exp(lam X)`` and its first two derivatives."""
    if not math.isfinite(lam):
        raise ValueError(f"lambda must be finite, got {lam}")
    x = law.x.astype(np.float64)
    a = lam * x
    shift = a.max()
    w = law.p * np.exp(a - shift)
    s = w.sum()
    value = float(shift) + math.log(s)
    q = w / s
    slope = float(np.dot(q, x))
    curvature = float(np.dot(q, (x - slope) ** 2))
    if not (math.isfinite(value) and math.isfinite(slope) and math.isfinite(curvature)):
        raise FloatingPointError(f"non-finite cumulant at lambda={lam}")
    return Cumulant(value, slope, curvature)


@dataclass(frozen=True)
class LambdaStar:
    lambda_star: float
    lambda_value: float
    f_star: float
    variance_at_tilt: float
    slope_residual: float


def find_lambda_star(law: StepLaw) -> LambdaStar:
    """Positive root of ``Lambda'``: bisection to width 1e-14, then Newton polish."""
    if law.mean >= 0.0 or max(law.values) <= 0:
        raise NotWellControlled(
            f"no positive root of Lambda': E X = {law.mean:.6g}, max step = {max(law.values)}"
        )
    lo, hi = 0.0, 1.0
    while cumulant(law, hi).slope <= 0.0:
        lo, hi = hi, 2.0 * hi
        if hi > 1e6:
            raise NoBracket("Lambda' stayed negative up to lambda = 1e6")
    while hi - lo > 1e-14:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if cumulant(law, mid).slope < 0.0:
            lo = mid
        else:
            hi = mid
    lam = 0.5 * (lo + hi)
    for _ in range(2):
        c = cumulant(law, lam)
        step = c.slope / c.curvature
        if lo <= lam - step <= hi:
            lam -= step
    c = cumulant(law, lam)
    return LambdaStar(lam, c.value, lam * c.slope - c.value, c.curvature, c.slope)


@dataclass(frozen=True)
class CriticalityReport:
    lambda_star: float
    lambda_value: float
    f_star: float
    log_mean_offspring: float
    variance_at_tilt: float
    verdict: str
    moment_diagnostic: bool
    b_log8_moment: float
    critical_band: float = CRITICAL_BAND

    def to_dict(self) -> dict:
        return {
            "lambda_star": self.lambda_star,
            "lambda_value": self.lambda_value,
            "f_star": self.f_star,
            "log_mean_offspring": self.log_mean_offspring,
            "variance_at_tilt": self.variance_at_tilt,
            "verdict": self.verdict,
            "moment_diagnostic": self.moment_diagnostic,
            "b_log8_moment": self.b_log8_moment,
            "critical_band": self.critical_band,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def classify(step: StepLaw, offspring: OffspringLaw, band: float = CRITICAL_BAND) -> CriticalityReport:
    """Compare the decay rate ``f(lambda*)`` of ``P(S_n >= 0)`` with ``log E B``.

    ``(E B)^n`` living descendants are expected per generation, each alive
    with probability about ``exp(-n f(lambda*))``, so ``f < log E B`` is
    supercritical and ``f > log E B`` subcritical.
    """
    if offspring.mean <= 1.0:
        raise LawError(f"criticality analysis needs E B > 1, got {offspring.mean}")
    root = find_lambda_star(step)
    log_mean = offspring.log_mean
    gap = root.f_star - log_mean
    if abs(gap) <= band:
        verdict = "critical"
    elif gap < 0:
        verdict = "supercritical"
    else:
        verdict = "subcritical"
    moment = offspring.b_log8_moment()
    return CriticalityReport(
        lambda_star=root.lambda_star,
        lambda_value=root.lambda_value,
        f_star=root.f_star,
        log_mean_offspring=log_mean,
        variance_at_tilt=root.variance_at_tilt,
        verdict=verdict,
        moment_diagnostic=math.isfinite(moment),
        b_log8_moment=moment,
        critical_band=band,
    )


@dataclass(frozen=True)
class TiltedStepLaw:
    base: StepLaw
    lam: float
    probs: tuple[float, ...]
    mean: float
    variance: float

    @property
    def values(self) -> tuple[int, ...]:
        return self.base.values

    @property
    def offsets(self) -> np.ndarray:
        """Support of the centred variable ``Y - Lambda'(lam)``."""
        return self.base.x - self.mean

    def as_step_law(self) -> StepLaw:
        return StepLaw(self.base.values, self.probs)


def tilt(law: StepLaw, lam: float) -> TiltedStepLaw:
    """Exponentially tilted law ``p_x exp(lam x - Lambda(lam))``."""
    c = cumulant(law, lam)
    x = law.x.astype(np.float64)
    q = law.p * np.exp(lam * x - c.value)
    q = q / q.sum()
    mean = float(np.dot(q, x))
    variance = float(np.dot(q, (x - mean) ** 2))
    return TiltedStepLaw(law, lam, tuple(float(v) for v in q), mean, variance)
