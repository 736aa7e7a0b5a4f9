import itertools
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qoslab.rate_control import (
    DEFAULT_LADDER,
    ControllerState,
    EncodingLadder,
    EncodingLevel,
    Level,
    PathMetrics,
    Thresholds,
    Border,
    classify,
    combine,
    decide,
    level_params,
)

metric = st.floats(min_value=0, max_value=1e6, allow_nan=False)
triples = st.builds(PathMetrics, metric, metric, metric)


@pytest.mark.parametrize(
    "bw,rtt,jit,expected",
    [
        (100000, 20, 1, Level.GOOD),
        (4000, 50, 1, Level.POOR),
        (10000, 90, 2, Level.GOOD),
        (20000, 300, 1, Level.POOR),
        (7000, 100, 5, Level.MID),
        (5000, 180, 8, Level.MID),
    ],
)
def test_classify_examples(bw, rtt, jit, expected):
    assert classify(PathMetrics(bw, rtt, jit)) is expected


def test_ladder_matches_encoding_table():
    assert level_params(Level.GOOD) == EncodingLevel(4000, 30, 1920, 1080, 5)
    assert level_params(Level.MID) == EncodingLevel(2200, 15, 1920, 1080, 7)
    assert level_params(Level.POOR) == EncodingLevel(700, 5, 640, 360, 5)
    assert DEFAULT_LADDER.level_of(EncodingLevel(2200, 15, 1920, 1080, 7)) is Level.MID
    assert DEFAULT_LADDER.level_of(EncodingLevel(2200, 15, 1920, 1080, 9)) is None


def test_level_order():
    assert Level.GOOD > Level.MID > Level.POOR
    assert Level.parse("mid") is Level.MID
    assert Level.POOR.label == "Poor"


@pytest.mark.parametrize("bad", [-1.0, float("nan"), float("inf")])
def test_metrics_reject_invalid(bad):
    with pytest.raises(ValueError):
        PathMetrics(bad, 0, 0)


def test_threshold_and_ladder_invariants():
    with pytest.raises(ValueError):
        Thresholds(Border(5000, 90, 2), Border(5000, 180, 8))
    with pytest.raises(ValueError):
        EncodingLevel(700, 5, 641, 360, 5)
    with pytest.raises(ValueError):
        EncodingLevel(700, 5, 640, 360, 0)
    with pytest.raises(ValueError):
        EncodingLadder(mid=EncodingLevel(4000, 15, 1920, 1080, 7))


def test_combine_examples():
    u, d = PathMetrics(100000, 20, 1), PathMetrics(4000, 20, 1)
    assert combine(u, d) == PathMetrics(4000, 20, 1)
    assert combine(PathMetrics(8000, 30, 1), PathMetrics(50000, 200, 1)) == PathMetrics(8000, 200, 1)
    assert combine(u, u) == u


def test_decide_examples():
    state = ControllerState()
    out = decide(state, PathMetrics(1000, 20, 1), now_ms=100)
    assert out == (Level.POOR, level_params(Level.POOR))
    assert state.current_level is Level.POOR

    state = ControllerState()
    assert decide(state, PathMetrics(100000, 20, 1), now_ms=100) is None
    assert state.current_level is Level.GOOD


def test_decide_hold_down():
    state = ControllerState(hold_down_ms=1000)
    poor = PathMetrics(1000, 20, 1)
    assert decide(state, poor, now_ms=400) is None
    assert decide(state, poor, now_ms=1200)[0] is Level.POOR


def test_decide_rejects_time_travel():
    state = ControllerState(last_decision_at_ms=500)
    with pytest.raises(ValueError):
        decide(state, PathMetrics(1000, 20, 1), now_ms=100)


def _reference_level(bw, rtt, jit, t=Thresholds()):
    # Written out from the threshold table rather than reusing classify().
    good = bw >= t.good_mid.bw_kbps and rtt <= t.good_mid.rtt_ms and jit <= t.good_mid.jitter_ms
    poor = bw < t.mid_poor.bw_kbps or rtt > t.mid_poor.rtt_ms or jit > t.mid_poor.jitter_ms
    return Level.GOOD if good else Level.POOR if poor else Level.MID


def test_boundary_grid_matches_tie_break_table():
    t0 = time.perf_counter()
    bw_points = [9999, 10000, 10001, 4999, 5000, 5001]
    rtt_points = [89, 90, 91, 179, 180, 181]
    jit_points = [1.9, 2.0, 2.1, 7.9, 8.0, 8.1]
    for bw, rtt, jit in itertools.product(bw_points, rtt_points, jit_points):
        assert classify(PathMetrics(bw, rtt, jit)) is _reference_level(bw, rtt, jit)
    assert time.perf_counter() - t0 < 1.0


@settings(max_examples=500)
@given(triples)
def test_good_and_poor_never_overlap(m):
    t = Thresholds()
    good = m.bandwidth_kbps >= t.good_mid.bw_kbps and m.rtt_ms <= t.good_mid.rtt_ms and m.jitter_ms <= t.good_mid.jitter_ms
    poor = m.bandwidth_kbps < t.mid_poor.bw_kbps or m.rtt_ms > t.mid_poor.rtt_ms or m.jitter_ms > t.mid_poor.jitter_ms
    assert not (good and poor)
    assert classify(m) in set(Level)


@given(triples, st.sampled_from(["bw", "rtt", "jitter"]), st.floats(min_value=0, max_value=1e5))
def test_improving_a_metric_never_lowers_level(m, which, delta):
    if which == "bw":
        better = PathMetrics(m.bandwidth_kbps + delta, m.rtt_ms, m.jitter_ms)
    elif which == "rtt":
        better = PathMetrics(m.bandwidth_kbps, max(0.0, m.rtt_ms - delta), m.jitter_ms)
    else:
        better = PathMetrics(m.bandwidth_kbps, m.rtt_ms, max(0.0, m.jitter_ms - delta))
    assert classify(better) >= classify(m)


@given(triples, triples)
def test_combine_commutes_with_classify(u, d):
    assert classify(combine(u, d)) == min(classify(u), classify(d))


@given(triples, st.integers(min_value=1, max_value=20))
def test_decide_changes_at_most_once_per_regime(m, repeats):
    state = ControllerState()
    changes = sum(decide(state, m, now_ms=float(i)) is not None for i in range(repeats))
    assert changes <= 1
