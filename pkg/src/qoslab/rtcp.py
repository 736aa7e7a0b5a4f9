"""Receiver-side feedback: interarrival jitter, LSR/DLSR round trip, bandwidth
estimation and periodic report emission."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Optional

from .rate_control import PathMetrics

JITTER_GAIN = 1.0 / 16.0
CONGESTION_LOSS_FRACTION = 0.02


class MalformedReportError(ValueError):
    """Report timestamps are inconsistent with the local clock."""


class PathId(enum.Enum):
    UPLOAD = "upload"
    DOWNLOAD = "download"
    DIRECT = "direct"


class Strategy(enum.Enum):
    ORACLE = "oracle"
    DELAY_GRADIENT = "delay-gradient"


@dataclass(frozen=True)
class ReceiverReport:
    metrics: PathMetrics
    path_id: PathId
    seq: int
    loss_fraction: float = 0.0
    # Timing echo for the round-trip computation at the report consumer.
    lsr_ms: Optional[float] = None
    dlsr_ms: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.loss_fraction <= 1.0:
            raise ValueError(f"loss_fraction out of [0, 1]: {self.loss_fraction}")


@dataclass(frozen=True)
class JitterState:
    j_ms: float = 0.0
    last_transit_ms: Optional[float] = None


def update_jitter(state: JitterState, transit_ms: float) -> JitterState:
    if state.last_transit_ms is None:
        return JitterState(state.j_ms, transit_ms)
    d = abs(transit_ms - state.last_transit_ms)
    return JitterState(state.j_ms + (d - state.j_ms) * JITTER_GAIN, transit_ms)


def compute_rtt(now_ms: float, lsr_ms: float, dlsr_ms: float) -> float:
    rtt = now_ms - lsr_ms - dlsr_ms
    if rtt < 0:
        raise MalformedReportError(
            f"report echo lsr={lsr_ms} dlsr={dlsr_ms} lies after local time {now_ms}"
        )
    return rtt


@dataclass(frozen=True)
class EstimatorState:
    strategy: Strategy = Strategy.ORACLE
    est_kbps: float = 10000.0
    oracle_lag_ms: int = 100
    increase_factor: float = 1.08
    decrease_factor: float = 0.85
    queue_delay_threshold_ms: float = 50.0
    est_cap_kbps: float = 200000.0

    def __post_init__(self) -> None:
        if not 0.0 < self.decrease_factor < 1.0 < self.increase_factor:
            raise ValueError("need 0 < decrease_factor < 1 < increase_factor")
        if self.est_kbps <= 0:
            raise ValueError("est_kbps must be positive")
        if self.oracle_lag_ms < 0:
            raise ValueError("oracle_lag_ms must be >= 0")
        if self.est_kbps > self.est_cap_kbps:
            object.__setattr__(self, "est_kbps", self.est_cap_kbps)


def estimate_bandwidth(
    state: EstimatorState,
    measured_throughput_kbps: float,
    queue_delay_ms: float,
    loss_fraction: float,
    true_capacity_kbps: float,
) -> EstimatorState:
    """Advance the estimator by one report interval.

    For the oracle, ``true_capacity_kbps`` must already be the bottleneck
    capacity sampled ``oracle_lag_ms`` before the report instant; the caller
    owns the capacity history.
    """
    if state.strategy is Strategy.ORACLE:
        est = min(true_capacity_kbps, state.est_cap_kbps)
        return replace(state, est_kbps=est)

    if loss_fraction > CONGESTION_LOSS_FRACTION or queue_delay_ms > state.queue_delay_threshold_ms:
        est = state.decrease_factor * measured_throughput_kbps
    else:
        est = min(
            state.est_cap_kbps,
            max(state.est_kbps * state.increase_factor, measured_throughput_kbps),
        )
    if est <= 0:
        # Nothing received this interval; keep the previous estimate.
        est = state.est_kbps
    return replace(state, est_kbps=est)


def build_report(
    jitter: JitterState,
    estimator: EstimatorState,
    rtt_ms: float,
    loss_fraction: float,
    path: PathId,
    now_ms: float,
    seq: int,
    lsr_ms: Optional[float] = None,
    dlsr_ms: float = 0.0,
) -> ReceiverReport:
    """Package the receiver's view into a report; ``seq`` is the previous one."""
    metrics = PathMetrics(
        bandwidth_kbps=estimator.est_kbps,
        rtt_ms=rtt_ms,
        jitter_ms=jitter.j_ms,
        sampled_at_ms=now_ms,
    )
    return ReceiverReport(
        metrics=metrics,
        path_id=path,
        seq=seq + 1,
        loss_fraction=loss_fraction,
        lsr_ms=lsr_ms,
        dlsr_ms=dlsr_ms,
    )


@dataclass
class ReportScheduler:
    """Fixed-period report clock; due times are ``phase + k * period``."""

    period_ms: int = 500
    phase_ms: float = 0.0
    emitted: int = 0

    def __post_init__(self) -> None:
        if self.period_ms <= 0:
            raise ValueError("period_ms must be positive")

    @property
    def next_due_ms(self) -> float:
        # Multiplied, not accumulated, so due times stay exact.
        return self.phase_ms + (self.emitted + 1) * self.period_ms

    def advance(self) -> float:
        due = self.next_due_ms
        self.emitted += 1
        return due
