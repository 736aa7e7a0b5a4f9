"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import functools
import itertools
import random
import statistics
import time

import pytest

from qoslab import cli
from qoslab.metrics import detect_reactions, write_csv
from qoslab.rate_control import Level, PathMetrics, classify, level_params
from qoslab.rtcp import JitterState, update_jitter
from qoslab.simcore import relay_forwarding_latency, run
from conftest import make_config


@pytest.fixture
def verdict(capsys):
    def report(n, title, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n:>2} {'PASS' if ok else 'FAIL'}: {title} [{detail}]")
        assert ok, f"criterion {n}: {detail}"

    return report


@functools.lru_cache(maxsize=None)
def preset_runs(name):
    _, specs, _ = cli.parse_config(cli.build_parser().parse_args(["run", "--scenario", name]))
    return [(spec, run(spec.config)) for spec in specs]


def mean_reaction_ms(traces):
    recs = [r for t in traces for r in detect_reactions(t) if not r.censored]
    return statistics.fmean(r.reaction_ms for r in recs)


def sender_level_at(trace, t_ms, initial=Level.GOOD):
    level = initial
    for d in trace.of_kind("Decision"):
        if d["actor"] == "sender" and d.time_ms <= t_ms:
            level = d["level_to"]
    return level


# Tie-break table for the 27 below/at/above combinations around each border
# row. Digits index (bw, rtt, jitter) positions 0=below, 1=at, 2=above;
# G/M/P is the documented outcome (good needs all at-or-better, poor needs a
# strict violation).
GOOD_MID_TABLE = "MMMMMMMMM" "GGMGGMMMM" "GGMGGMMMM"
MID_POOR_TABLE = "PPPPPPPPP" "MMPMMPPPP" "MMPMMPPPP"


def test_criterion_01_controller_exactness(verdict):
    t0 = time.perf_counter()
    rows = {
        "good_mid": (GOOD_MID_TABLE, (10000, 90, 2)),
        "mid_poor": (MID_POOR_TABLE, (5000, 180, 8)),
    }
    mismatches = []
    for name, (table, (bw, rtt, jit)) in rows.items():
        for i, (a, b, c) in enumerate(itertools.product(range(3), repeat=3)):
            m = PathMetrics(bw + (a - 1), rtt + (b - 1), jit + (c - 1) * 0.1)
            got = classify(m).label[0]
            if got != table[i]:
                mismatches.append((name, a, b, c, got, table[i]))
    ladder = [
        (level_params(Level.GOOD), (4000, 30, 1920, 1080, 5)),
        (level_params(Level.MID), (2200, 15, 1920, 1080, 7)),
        (level_params(Level.POOR), (700, 5, 640, 360, 5)),
    ]
    ladder_ok = all(
        (p.bitrate_kbps, p.framerate_fps, p.width_px, p.height_px, p.gop_frames) == want for p, want in ladder
    )
    elapsed = time.perf_counter() - t0
    ok = not mismatches and ladder_ok and elapsed < 1.0
    verdict(1, "controller exactness", ok, f"54 grid cases, {len(mismatches)} mismatches, ladder={ladder_ok}, {elapsed:.3f}s")


def test_criterion_02_latency_level_trace(verdict):
    t0 = time.perf_counter()
    trace = run(make_config(shaping__kind="latency"))
    elapsed = time.perf_counter() - t0
    period = 500
    expected = [Level.POOR, Level.MID, Level.GOOD, Level.MID, Level.POOR]
    boundaries = [0, 20000, 40000, 60000, 80000, 100000]
    problems = []
    for i, want in enumerate(expected):
        start, end = boundaries[i], boundaries[i + 1]
        # The first phase starts from the configured initial level, not a boundary.
        settle = start + 2 * period if i else start + 4 * period
        levels = {sender_level_at(trace, settle)}
        levels |= {d["level_to"] for d in trace.of_kind("Decision") if settle < d.time_ms < end}
        if levels != {want}:
            problems.append(f"phase {i}: {sorted(l.label for l in levels)}")
    reactions = [r.reaction_ms for r in detect_reactions(trace)]
    ok = not problems and elapsed < 5.0 and all(r <= 2 * period for r in reactions)
    verdict(2, "latency preset level trace", ok,
            f"reactions {[round(r) for r in reactions]} ms, {elapsed:.2f}s, {problems or 'Poor/Mid/Good/Mid/Poor'}")


def test_criterion_03_bandwidth_level_trace(verdict):
    trace = run(make_config())
    expected = {0: Level.POOR, 1: Level.GOOD, 2: Level.GOOD, 3: Level.GOOD, 4: Level.POOR}
    problems = []
    for phase, want in expected.items():
        start = phase * 20000
        # Steady second half of the phase.
        seen = {c["level"] for c in trace.of_kind("Consume") if start + 10000 <= c.time_ms < start + 20000}
        if seen != {want}:
            problems.append(f"phase {phase}: {sorted(l.label for l in seen)}")
    verdict(3, "bandwidth preset classification", not problems,
            problems or "1 Mbps Poor, 10 Mbps Good (inclusive tie-break at the border), 100 Mbps Good")


def test_criterion_04_report_period_monotonicity(verdict):
    by_period = {}
    for spec, trace in preset_runs("paper-table4"):
        by_period.setdefault(spec.config.report_period_ms, []).append(trace)
    fast, slow = mean_reaction_ms(by_period[500]), mean_reaction_ms(by_period[1000])
    diff = slow - fast
    ok = slow > fast and 0.25 * 500 <= diff <= 2 * 500
    verdict(4, "report-period monotonicity", ok, f"500 ms: {fast:.1f} ms, 1000 ms: {slow:.1f} ms, diff {diff:.1f} ms")


def test_criterion_05_topology_ordering(verdict):
    by_row = {}
    forwarding = []
    for spec, trace in preset_runs("paper-table6"):
        by_row.setdefault(spec.row, []).append(trace)
        forwarding.extend(relay_forwarding_latency(trace))
    direct = mean_reaction_ms(by_row["Direct"])
    transcoding = mean_reaction_ms(by_row["TranscodingRelay"])
    reporting = mean_reaction_ms(by_row["ReportingRelay"])
    fwd = statistics.fmean(forwarding)
    ordered = direct <= transcoding <= reporting
    gap_ok = reporting - direct >= fwd
    verdict(5, "topology ordering", ordered and gap_ok,
            f"Direct {direct:.1f} / Transcoding {transcoding:.1f} / Reporting {reporting:.1f} ms; "
            f"Reporting-Direct {reporting - direct:.1f} ms vs mean forwarding {fwd:.1f} ms")


def test_criterion_06_receiver_update_bound(verdict):
    checked, problems = 0, []
    for name in ("paper-table6", "paper-table4"):
        for spec, trace in preset_runs(name):
            ladder = spec.config.ladder
            arrivals = [r for r in trace.of_kind("FrameArrival") if r["node"] == "receiver"]
            for rec in detect_reactions(trace):
                if rec.censored:
                    continue
                checked += 1
                t_d = rec.t_sender_decision_ms
                new = [a for a in arrivals if a["encoded_at"] >= t_d and a["level"] == rec.level_to]
                if not new:
                    problems.append(f"{spec.run_id}#{rec.change_idx}: no update before end")
                    continue
                first = min(new, key=lambda a: a["encoded_at"])
                if not (first["headers"] and first["key"]) or first.time_ms != rec.t_receiver_update_ms:
                    problems.append(f"{spec.run_id}#{rec.change_idx}: first new frame lacks headers")
                interval = level_params(rec.level_to, ladder).frame_interval_ms
                # Realized one-way delay of the keyframe, serialization included.
                one_way = first.time_ms - first["encoded_at"]
                if rec.update_ms > interval + one_way + 1e-6:
                    problems.append(f"{spec.run_id}#{rec.change_idx}: {rec.update_ms:.1f} > {interval + one_way:.1f}")
    verdict(6, "receiver encoding update bound", not problems and checked > 0, f"{checked} records, {problems or 'all within bound'}")


STEADY_POOR_DOWNLINK = dict(
    shaping__schedule=[[0, 1000]],
    shaping__cycle_s=1e9,
    shaping__path="downlink",
    scenario__duration_s=100.0,
)
# The start-up backlog on the 1 Mbps downlink has drained by ~25 s.
STEADY_WINDOW = (40000.0, 100000.0)


def delivered_bytes(trace, node, start=STEADY_WINDOW[0], end=STEADY_WINDOW[1]):
    return sum(r["bytes"] for r in trace.of_kind("FrameArrival") if r["node"] == node and start <= r.time_ms < end)


def test_criterion_07_transcoding_isolation(verdict):
    trace = run(make_config(scenario__topology="transcoding", **STEADY_POOR_DOWNLINK))
    sender_levels = {r["level"] for r in trace.of_kind("FrameSent") if r["node"] == "sender"}
    up, down = delivered_bytes(trace, "relay"), delivered_bytes(trace, "receiver")
    down_kbps = down * 8 / 60000.0
    ratio = up / down
    ok = sender_levels == {Level.GOOD} and abs(down_kbps - 700) / 700 <= 0.02 and 5.2 <= ratio <= 6.3
    verdict(7, "transcoding-relay isolation", ok,
            f"sender levels {sorted(l.label for l in sender_levels)}, receiver {down_kbps:.1f} kbps, up/down {ratio:.3f}")


def test_criterion_08_reporting_relay_efficiency(verdict):
    trace = run(make_config(scenario__topology="reporting", **STEADY_POOR_DOWNLINK))
    final = sender_level_at(trace, STEADY_WINDOW[0])
    up, down = delivered_bytes(trace, "relay"), delivered_bytes(trace, "receiver")
    rel = abs(up - down) / down
    ok = final is Level.POOR and rel <= 0.10
    verdict(8, "reporting-relay efficiency", ok, f"sender level {final.label}, up {up} B, down {down} B, diff {rel:.2%}")


@pytest.mark.parametrize("level", list(Level), ids=lambda l: l.label)
def test_criterion_09_bitrate_conformance(verdict, level):
    cfg = make_config(
        scenario__initial_level=level.label,
        scenario__hold_down_ms=10**9,
        scenario__duration_s=30.0,
        shaping__kind="latency",
        shaping__schedule=[[0, 0]],
        shaping__cycle_s=1e9,
    )
    settings = level_params(level)
    trace = run(cfg)
    frames = [r for r in trace.of_kind("FrameArrival") if r["node"] == "receiver"]
    keys = [i for i, r in enumerate(frames) if r["key"] and r.time_ms >= 2000]
    gops = 10
    window = frames[keys[0]:keys[gops]]
    seconds = gops * settings.gop_frames / settings.framerate_fps
    kbps = sum(r["bytes"] for r in window) * 8 / seconds / 1000
    err = abs(kbps - settings.bitrate_kbps) / settings.bitrate_kbps
    verdict(9, f"bitrate conformance ({level.label})", err <= 0.01, f"{kbps:.2f} kbps vs {settings.bitrate_kbps}, error {err:.4%}")


def brute_force_jitter(transits):
    # Expanded sum of the gain-1/16 filter over all past transit differences.
    n = len(transits) - 1
    total = 0.0
    for k in range(1, n + 1):
        total += abs(transits[k] - transits[k - 1]) / 16.0 * (15.0 / 16.0) ** (n - k)
    return total


def test_criterion_10_jitter_oracle(verdict):
    rng = random.Random(2024)
    worst = 0.0
    for _ in range(1000):
        transits = [rng.uniform(0, 500) for _ in range(rng.randint(2, 150))]
        state = JitterState()
        for t in transits:
            state = update_jitter(state, t)
        ref = brute_force_jitter(transits)
        worst = max(worst, abs(state.j_ms - ref) / ref if ref else abs(state.j_ms))
    verdict(10, "jitter oracle equivalence", worst <= 1e-9, f"worst relative error {worst:.2e} over 1000 sequences")


def test_criterion_11_determinism(verdict, tmp_path):
    cfg = make_config(scenario__topology="reporting", shaping__kind="latency", media__size_jitter=0.3, scenario__seed=77)
    outputs = []
    for i in range(2):
        trace = run(cfg)
        trace.write(tmp_path / f"trace{i}.tsv")
        write_csv(detect_reactions(trace), tmp_path / f"reactions{i}.csv")
        outputs.append(((tmp_path / f"trace{i}.tsv").read_bytes(), (tmp_path / f"reactions{i}.csv").read_bytes()))
    same = outputs[0] == outputs[1]
    verdict(11, "determinism", same, f"trace {len(outputs[0][0])} B, csv {len(outputs[0][1])} B, identical={same}")
