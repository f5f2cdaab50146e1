import math

import numpy as np
import pytest

from krillwalk.engine import simulate_batch
from krillwalk.errors import PowerError, SupercriticalDivergence, ThresholdBeyondCensoring
from krillwalk.lab import (
    TailTable,
    ez_series,
    log_slope,
    m_tail,
    max_profile,
    z_mean_bracket,
    z_tail,
    zlogz_trend,
)
from krillwalk.model import OffspringLaw, StepLaw, pemantle_law

P = (2 - math.sqrt(3)) / 4
LAM = math.log(2 + math.sqrt(3))
TWO = OffspringLaw.constant(2)
DOWN = StepLaw((-1,), (1.0,))


@pytest.fixture(scope="module")
def batch():
    return simulate_batch(pemantle_law(), TWO, 400_000, seed=5, max_nodes=10**5)


def test_log_slope_recovers_power():
    x = np.arange(1, 50)
    assert log_slope(x, 3.0 * x**-1.5) == pytest.approx(-1.5)


def test_series_zero_horizon():
    rep = ez_series(pemantle_law(), TWO, 0)
    assert rep.total == 1.0


def test_series_first_terms():
    rep = ez_series(pemantle_law(), TWO, 10)
    assert rep.terms[0] == 1.0
    assert rep.terms[1] == pytest.approx(2 * P, rel=1e-12)
    assert rep.terms[2] == pytest.approx(4 * P, rel=1e-12)
    assert np.all(np.diff(rep.partial_sums) > 0)


def test_series_critical_slope_and_total():
    rep = ez_series(pemantle_law(), TWO, 2000)
    n = np.arange(200, 2001)
    assert -1.65 <= log_slope(n, rep.terms[200:]) <= -1.35
    assert rep.total == pytest.approx(2.732, abs=0.01)
    assert rep.completion_uncertainty < 0.01


def test_series_subcritical_decays_fast():
    rep = ez_series(pemantle_law(0.05), TWO, 400)
    assert rep.slope < -5
    assert rep.tail_completion < 1e-12


def test_series_refuses_supercritical():
    with pytest.raises(SupercriticalDivergence):
        ez_series(pemantle_law(0.2), TWO, 100)


def test_z_tail_examples(batch):
    table = z_tail(None, None, 0, [0, 1, 100], seed=0, batch=batch)
    assert table.row(0)["estimate"] == 1.0
    r1 = table.row(1)
    exact = 1 - (1 - P) ** 2
    assert abs(r1["estimate"] - exact) <= 3 * math.sqrt(exact * (1 - exact) / batch.trials)
    assert r1["wilson_low"] <= r1["estimate"] <= r1["wilson_high"]
    assert table.monotone_violations() == 0


def test_z_tail_refuses_thresholds_beyond_censoring(batch):
    with pytest.raises(ThresholdBeyondCensoring):
        z_tail(None, None, 0, [10, 10**6], seed=0, batch=batch)
    with pytest.raises(ThresholdBeyondCensoring):
        z_tail(pemantle_law(), TWO, 100, [10, 2000], seed=0, max_nodes=1000)


def test_z_tail_counts_censored_as_exceedances():
    b = simulate_batch(StepLaw.from_spec("-1:0.3,1:0.7"), TWO, 200, seed=1, max_nodes=300)
    table = z_tail(None, None, 0, [299, 300], seed=0, batch=b)
    assert table.row(299)["hits"] == int(b.truncated.sum())
    assert table.row(300)["hits"] == 0


def test_m_tail_examples(batch):
    table = m_tail(pemantle_law(), TWO, 0, 4, seed=0, batch=batch)
    assert table.row(0)["estimate"] == 1.0
    for r in table.rows:
        assert r["compensator_upper_check"] <= 1.0
    r1 = table.row(1)
    assert math.exp(LAM) * r1["estimate"] <= 1 + 3 * math.exp(LAM) * r1["se"]
    assert min(table.row(k)["point_compensator"] for k in range(1, 5)) > 0.2


def test_m_tail_power_check(batch):
    with pytest.raises(PowerError):
        m_tail(pemantle_law(), TWO, 0, 9, seed=0, batch=batch)


def test_zlogz_trivial_and_replicates():
    b = simulate_batch(DOWN, TWO, 100, seed=1)
    assert zlogz_trend(DOWN, TWO, [10, 100], seed=1, batch=b) == [(10, 0.0), (100, 0.0)]
    b = simulate_batch(pemantle_law(), TWO, 4000, seed=2)
    plain = zlogz_trend(None, None, [100, 1000], seed=0, batch=b)
    z = b.z[:1000].astype(float)
    assert plain[1][1] == pytest.approx(float(np.mean(z * np.log(z))))
    rep = zlogz_trend(None, None, [100, 1000], seed=0, batch=b, replicates=4)
    blocks = b.z.astype(float).reshape(4, 1000)[:, :100]
    assert rep[0][1] == pytest.approx(float(np.median(np.mean(blocks * np.log(blocks), axis=1))))
    with pytest.raises(ValueError):
        zlogz_trend(None, None, [100, 1000], seed=0, batch=b, replicates=5)


def test_max_profile_trivial():
    prof = max_profile(DOWN, TWO, 500, seed=3)
    assert list(prof["by_k"]) == [0]
    cell = prof["by_k"][0]
    assert cell["count"] == 500 and cell["unique"] == 1.0
    assert cell["generation_counts"] == {0: 500}


def test_max_profile_complement(batch):
    prof = max_profile(None, None, 0, seed=0, batch=batch)
    p0 = prof["by_k"][0]["probability"]
    ge1 = float((batch.m_living >= 1).mean())
    assert p0 == pytest.approx(1 - ge1, abs=1e-15)
    assert sum(c["count"] for c in prof["by_k"].values()) == batch.trials


def test_z_mean_bracket(batch):
    br = z_mean_bracket(batch)
    assert br["lower"] <= br["upper"]
    assert br["lower"] == pytest.approx(float(batch.z.mean()))
    assert br["reference"] >= 100


def test_tail_table_csv():
    t = TailTable("z", 10, [{"threshold": 1, "estimate": 0.5, "se": 0.1}])
    text = t.to_csv()
    assert text.splitlines() == ["threshold,estimate,se", "1,0.5,0.1"]
    assert TailTable("z", 0).to_csv() == ""
