"""Acceptance run: one test per criterion, each recording a PASS/FAIL line.

Monte Carlo criteria share a single seed fixed before any acceptance run.
The full module takes about a minute and a half on one core.
"""

import csv
import io
import json
import math
import time

import numpy as np
import pytest

from krillwalk.cli import main
from krillwalk.engine import level_means_exact, simulate_batch
from krillwalk.lab import ez_series, log_slope, m_tail, z_mean_bracket, zlogz_trend
from krillwalk.model import OffspringLaw, StepLaw, find_lambda_star, pemantle_law, tilt
from krillwalk.pathlaw import (
    BarrierProfile,
    PathQuery,
    TerminalCondition,
    ballot_asymptotic,
    path_log_probability,
    path_probability,
    path_probability_exact,
    tilted_path_result,
)

SEED = 20261019
TWO = OffspringLaw.constant(2)
LAM = math.log(2 + math.sqrt(3))
PEM = pemantle_law()
PEM_SPEC = PEM.to_spec()
# floor for min_k k e^{lam k} P(M = k), k = 1..6: half the minimum (0.40) of a
# 10^7-trial calibration run under seed 7
M_POINT_FLOOR = 0.20
TAIL_THRESHOLDS = [int(round(10 ** (2 + 0.25 * i))) for i in range(9)]


@pytest.fixture(scope="module")
def big_batch():
    return simulate_batch(PEM, TWO, 10**7, SEED, max_nodes=10**6)


def test_c1_criticality(report_criterion):
    t0 = time.perf_counter()
    buf = io.StringIO()
    code = main(["analyze", "--step", PEM_SPEC, "--offspring", "const:2"], stdout=buf)
    res = json.loads(buf.getvalue())["result"]
    dt = time.perf_counter() - t0
    ok = (
        code == 0
        and res["verdict"] == "critical"
        and abs(res["lambda_star"] - 1.3169579) <= 1e-6
        and abs(res["f_star"] - math.log(2)) <= 1e-9
        and abs(res["variance_at_tilt"] - 1.0) <= 1e-9
        and dt < 1.0
    )
    report_criterion("C1 criticality", ok,
                     f"verdict={res['verdict']} lambda*={res['lambda_star']:.10f} "
                     f"f-log2={res['f_star'] - math.log(2):.2e} L''-1={res['variance_at_tilt'] - 1:.2e} {dt:.3f}s")
    assert ok


def _random_query(rng, step, n):
    lo = -math.inf if rng.random() < 0.3 else -int(rng.integers(0, 4))
    hi = math.inf if rng.random() < 0.3 else int(rng.integers(1, 6))
    prof = BarrierProfile._build(n, lo, hi, "random")
    k = int(rng.integers(-3, 6))
    term = [TerminalCondition.equals(k), TerminalCondition.at_least(k),
            TerminalCondition.in_set({k, k + 1, k + 3}), TerminalCondition.anything()][int(rng.integers(0, 4))]
    return PathQuery(step, prof, term)


def test_c2_oracle_equivalence(report_criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    laws = [StepLaw.from_spec("-1:0.9330127,1:0.0669873"), StepLaw.from_spec("-1:1/2,1:1/2")]
    worst = 0.0
    for i in range(200):
        q = _random_query(rng, laws[i % 2], int(rng.integers(0, 13)))
        worst = max(worst, abs(path_probability(q) - float(path_probability_exact(q))))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-12 and dt < 60
    report_criterion("C2 oracle equivalence", ok, f"200 queries, max abs error {worst:.2e}, {dt:.1f}s")
    assert ok


def test_c3_transfer_identity(report_criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED + 3)
    laws = [PEM, StepLaw.from_spec("2:0.1,-1:0.9"), StepLaw.from_spec("-2:0.3,-1:0.4,1:0.2,3:0.1")]
    worst = 0.0
    for i in range(50):
        step = laws[i % 3]
        n = int(rng.integers(1, 2001))
        m = int(rng.integers(0, 30))
        k = int(rng.integers(0, 40))
        if i % 2:
            q = PathQuery(step, BarrierProfile.one_sided(n, m), TerminalCondition.equals(k))
        else:
            q = PathQuery(step, BarrierProfile.corridor(n, m, k + int(rng.integers(1, 40))),
                          TerminalCondition.at_least(k))
        direct = path_log_probability(q)
        tilted = tilted_path_result(q).log_probability
        if direct == -math.inf:
            assert tilted == -math.inf
            continue
        worst = max(worst, abs(math.expm1(tilted - direct)))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-10 and dt < 300
    report_criterion("C3 transfer identity", ok, f"50 queries n<=2000, max rel error {worst:.2e}, {dt:.1f}s")
    assert ok


def test_c4_ballot_scaling(report_criterion):
    t0 = time.perf_counter()
    sym = tilt(PEM, find_lambda_star(PEM).lambda_star).as_step_law()
    r_mean0, r_fnk = [], []
    for n in (400, 1600, 6400):
        k = math.isqrt(n)
        for m in (0, math.isqrt(n) // 2):
            p = path_probability(PathQuery(sym, BarrierProfile.one_sided(n, m), TerminalCondition.equals(k)))
            r_mean0.append(p / ballot_asymptotic("mean0", n, k, m))
        p = path_probability(PathQuery(sym, BarrierProfile.fnk(n, k), TerminalCondition.equals(k)))
        r_fnk.append(p / ballot_asymptotic("fnk", n, k))
    dt = time.perf_counter() - t0
    s1 = max(r_mean0) / min(r_mean0)
    s2 = max(r_fnk) / min(r_fnk)
    ok = s1 <= 3 and s2 <= 3 and dt < 600
    report_criterion("C4 ballot scaling", ok, f"mean0 max/min {s1:.3f}, fnk max/min {s2:.3f}, {dt:.1f}s")
    assert ok


def test_c5_size_biasing_bridge(report_criterion):
    t0 = time.perf_counter()
    b = simulate_batch(PEM, TWO, 10**6, SEED, max_depth=20, level_cap=20)
    mean, se = b.level_mean()
    exact = level_means_exact(PEM, TWO, 20)
    zs = {n: (mean[n] - exact[n]) / se[n] for n in (1, 2, 5, 10, 20)}
    dt = time.perf_counter() - t0
    ok = all(abs(z) <= 4 for z in zs.values()) and dt < 600
    report_criterion("C5 size-biasing bridge", ok,
                     "z-scores " + ", ".join(f"n={n}:{z:+.2f}" for n, z in zs.items()) + f", {dt:.1f}s")
    assert ok


def test_c6_expected_progeny_two_ways(report_criterion, big_batch):
    t0 = time.perf_counter()
    series = ez_series(PEM, TWO, 5000)
    head = simulate_batch(PEM, TWO, 10**6, SEED, max_nodes=10**6)
    assert np.array_equal(head.z, big_batch.z[: 10**6])
    br = z_mean_bracket(head)
    lo_se = math.hypot(br["se"], series.completion_uncertainty)
    hi_se = math.hypot(br["se_upper"], series.completion_uncertainty)
    dt = time.perf_counter() - t0
    ok = br["lower"] - 4 * lo_se <= series.total <= br["upper"] + 4 * hi_se and dt < 1800
    report_criterion("C6 E[Z] two ways", ok,
                     f"series {series.total:.5f}+-{series.completion_uncertainty:.1e}, "
                     f"MC bracket [{br['lower']:.3f}, {br['upper']:.3f}] (se {br['se']:.3f}/{br['se_upper']:.3f}), "
                     f"{dt:.1f}s")
    assert ok


@pytest.fixture(scope="module")
def tail_runs(tmp_path_factory):
    out = []
    d = tmp_path_factory.mktemp("tails")
    for threads in (1, 2):
        path = d / f"z_threads{threads}.csv"
        t0 = time.perf_counter()
        code = main(["tails", "--target", "z", "--step", PEM_SPEC, "--offspring", "const:2",
                     "--trials", str(10**7), "--seed", str(SEED), "--max-nodes", str(10**5),
                     "--thresholds", ",".join(map(str, TAIL_THRESHOLDS)), "--threads", str(threads),
                     "--out", str(path)], stdout=io.StringIO())
        out.append((code, path, time.perf_counter() - t0))
    return out


def test_c7_pemantle_tail(report_criterion, tail_runs):
    code, path, dt = tail_runs[0]
    text = "\n".join(line for line in path.read_text().splitlines() if not line.startswith("#"))
    rows = list(csv.DictReader(io.StringIO(text)))
    n = np.array([float(r["threshold"]) for r in rows])
    est = np.array([float(r["estimate"]) for r in rows])
    slope = log_slope(n, est)
    comp = {int(r["threshold"]): float(r["compensator"]) for r in rows}
    p = (2 - math.sqrt(3)) / 4
    c = math.log(1 / (4 * p)) / (4 * p)
    ok = code == 0 and -1.3 <= slope <= -0.8 and c / 2 <= comp[1000] <= 2 * c and dt < 7200
    report_criterion("C7 Pemantle tail", ok,
                     f"slope {slope:.3f}, compensator@1e3 {comp[1000]:.3f} vs c={c:.3f}, "
                     f"compensators {[round(v, 2) for v in comp.values()]}, {dt:.1f}s")
    assert ok


def test_c8_maximum_sandwich(report_criterion, big_batch):
    t0 = time.perf_counter()
    table = m_tail(PEM, TWO, 0, 6, SEED, batch=big_batch)
    rows = [table.row(k) for k in range(1, 7)]
    upper = [r["compensator_upper_check"] for r in rows]
    lower95 = [r["point_compensator"] - 1.96 * r["point_compensator_se"] for r in rows]
    dt = time.perf_counter() - t0
    ok = max(upper) <= 1 and min(lower95) > M_POINT_FLOOR
    report_criterion("C8 maximum tail sandwich", ok,
                     f"max e^(lk)(P-3SE) {max(upper):.3f}, "
                     f"k e^(lk) P(M=k) {[round(float(r['point_compensator']), 3) for r in rows]}, "
                     f"min 95% lower {min(lower95):.3f} > floor {M_POINT_FLOOR}, {dt:.1f}s")
    assert ok


def test_c9_zlogz_trend(report_criterion):
    t0 = time.perf_counter()
    schedule = [10**4, 10**5, 10**6, 10**7]
    crit = zlogz_trend(PEM, TWO, schedule, SEED, max_nodes=10**6, replicates=10)
    sub = zlogz_trend(pemantle_law(0.05), TWO, schedule, SEED, max_nodes=10**6, replicates=10)
    cv = [v for _, v in crit]
    sv = [v for _, v in sub]
    rising = all(b > a for a, b in zip(cv, cv[1:]))
    stable = abs(sv[-1] - sv[-2]) <= 0.1 * abs(sv[-2])
    dt = time.perf_counter() - t0
    ok = rising and stable
    report_criterion("C9 Z log Z trend", ok,
                     f"critical medians {[round(v, 3) for v in cv]}, subcritical {[round(v, 4) for v in sv]}, "
                     f"{dt:.1f}s")
    assert ok


def test_c10_determinism(report_criterion, tail_runs):
    (c1, p1, _), (c2, p2, _) = tail_runs
    same = c1 == 0 and c2 == 0 and p1.read_bytes() == p2.read_bytes()
    report_criterion("C10 determinism", same, f"threads 1 vs 2 CSVs byte-identical: {same}")
    assert same
