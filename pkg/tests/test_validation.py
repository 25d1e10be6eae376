import math
import statistics
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rbis_sim.clocks import LocalClock, OscillatorModel
from rbis_sim.estimators import CorrectionState
from rbis_sim.validation import (
    SummaryStats,
    coverage_table,
    ground_truth,
    histogram,
    schedule_probes,
    slave_fire_time,
    summarize,
)


def clock(skew=0.0, offset=0, granularity=0):
    return LocalClock(OscillatorModel(skew, 0.0, offset), granularity_us=granularity)


def test_synchronized_system_has_zero_offset():
    corrections = [(50_000, CorrectionState(0))]
    samples = ground_truth(clock(), clock(), corrections, 100_000, 2_000_000)
    assert [s.probe_index for s in samples] == list(range(1, 20))
    assert {s.theta_true_us for s in samples} == {0}


def test_undercorrected_slave_fires_late():
    # slave runs 57 us behind the master, the correction only removes -50
    slave = clock(offset=-57)
    corrections = [(10_000, CorrectionState(-50))]
    samples = ground_truth(clock(), slave, corrections, 100_000, 1_000_000)
    assert {s.theta_true_us for s in samples} == {7}


def test_overcorrected_slave_fires_early():
    corrections = [(10_000, CorrectionState(-3))]
    samples = ground_truth(clock(), clock(), corrections, 100_000, 1_000_000)
    assert {s.theta_true_us for s in samples} == {-3}


def test_probes_before_first_correction_are_dropped():
    corrections = [(250_000, CorrectionState(0))]
    samples = ground_truth(clock(), clock(), corrections, 100_000, 1_000_000)
    assert samples[0].probe_index == 3
    assert ground_truth(clock(), clock(), [], 100_000, 1_000_000) == []


def test_fire_time_uses_correction_in_force():
    slave = clock()
    corrections = [(0, CorrectionState(0)), (150_000, CorrectionState(20))]
    t, seg = slave_fire_time(slave, corrections, 100_000)
    assert (t, seg) == (100_000, 0)
    t, seg = slave_fire_time(slave, corrections, 200_000, seg)
    assert (t, seg) == (200_020, 1)


def test_fire_time_on_skewed_clock_is_exact():
    slave = clock(skew=10.0)
    t, _ = slave_fire_time(slave, [(0, CorrectionState(0))], 1_000_010)
    assert t == 1_000_000
    t, _ = slave_fire_time(slave, [(0, CorrectionState(0))], 1_000_000)
    assert t == Fraction(1_000_000 * 100_000, 100_001)


def test_probe_plan_respects_run_window():
    plan = schedule_probes(100_000, clock(), 1_000_000)
    assert list(plan.indices()) == list(range(1, 10))
    plan = schedule_probes(100_000, clock(offset=30_000), 1_000_000, start_true_us=100_000)
    # master reads 130_000 at t = 100_000, so the first probe is n = 2
    assert plan.first_index == 2 and plan.last_index == 10
    with pytest.raises(ValueError):
        schedule_probes(0, clock(), 1)


def test_summarize_examples():
    s = summarize([4.5] * 10)
    assert (s.mean_us, s.std_us, s.min_us, s.max_us) == (4.5, 0.0, 4.5, 4.5)
    assert s.coverage == {1: 1.0, 2: 1.0, 3: 1.0}
    s = summarize([-1, 1])
    assert s.mean_us == 0.0 and s.std_us == pytest.approx(math.sqrt(2))
    assert (s.min_us, s.max_us) == (-1.0, 1.0)
    with pytest.raises(ValueError, match="insufficient samples"):
        summarize([3.0])


@given(st.lists(st.floats(-1e4, 1e4, allow_nan=False), min_size=2, max_size=200))
def test_summarize_against_statistics_module(xs):
    s = summarize(xs)
    assert s.count == len(xs)
    assert s.mean_us == pytest.approx(statistics.fmean(xs), abs=1e-6)
    assert s.std_us == pytest.approx(statistics.stdev(xs), rel=1e-6, abs=1e-6)
    cov = [s.coverage[k] for k in (1, 2, 3)]
    assert cov == sorted(cov) and all(0.0 <= c <= 1.0 for c in cov)
    bands = [s.within_band[b] for b in (15, 22, 30)]
    assert bands == sorted(bands)


def test_gaussian_coverage():
    x = np.random.default_rng(2024).normal(1.0, 5.0, 200_000)
    s = summarize(x)
    assert s.coverage[1] == pytest.approx(0.6827, abs=0.005)
    assert s.coverage[2] == pytest.approx(0.9545, abs=0.005)
    assert s.coverage[3] == pytest.approx(0.9973, abs=0.002)


def test_stats_dict_round_trip():
    s = summarize([1.0, 2.0, 7.0, -3.0])
    assert SummaryStats.from_dict(s.to_dict()) == s


def test_coverage_table_text():
    text = coverage_table(summarize([-1, 1]))
    assert "68.27" in text and "95.45" in text and "99.73" in text
    assert "0.00+/-1.41" in text


def test_histogram_examples():
    assert histogram([0.2, 0.7], 1).bins == {0: 2}
    assert histogram([], 1).bins == {}
    assert histogram([-0.5, 0.5], 1).bins == {-1: 1, 0: 1}
    assert histogram([4.0, 5.9, 6.0], 2).bins == {4: 2, 6: 1}
    with pytest.raises(ValueError):
        histogram([1.0], 0)


@given(
    st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=300),
    st.sampled_from([0.25, 0.5, 1.0, 2.0, 5.0]),
)
def test_histogram_invariants(xs, width):
    h = histogram(xs, width)
    assert h.count == len(xs)
    assert sum(h.density().values()) * width == pytest.approx(1.0)
    for v in xs:
        edge = math.floor(v / width) * width
        assert edge in h.bins
