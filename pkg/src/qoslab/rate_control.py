"""Three-level adaptive rate control.

Each incoming receiver report is classified as Good, Mid or Poor against two
threshold rows, and the controller maps the level onto a fixed encoding ladder.
Bandwidth is better when higher; RTT and jitter are better when lower.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import NamedTuple, Optional, Tuple


class Level(IntEnum):
    POOR = 0
    MID = 1
    GOOD = 2

    @property
    def label(self) -> str:
        return self.name.capitalize()

    @classmethod
    def parse(cls, text: str) -> "Level":
        return cls[text.strip().upper()]


@dataclass(frozen=True)
class PathMetrics:
    """One feedback sample for a path."""

    bandwidth_kbps: float
    rtt_ms: float
    jitter_ms: float
    sampled_at_ms: float = 0.0

    def __post_init__(self) -> None:
        for name in ("bandwidth_kbps", "rtt_ms", "jitter_ms"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value!r}")


class Border(NamedTuple):
    bw_kbps: float
    rtt_ms: float
    jitter_ms: float


@dataclass(frozen=True)
class Thresholds:
    good_mid: Border = Border(10000.0, 90.0, 2.0)
    mid_poor: Border = Border(5000.0, 180.0, 8.0)

    def __post_init__(self) -> None:
        g, p = self.good_mid, self.mid_poor
        if not (g.bw_kbps > p.bw_kbps and g.rtt_ms < p.rtt_ms and g.jitter_ms < p.jitter_ms):
            raise ValueError(
                "thresholds must satisfy good_mid.bw > mid_poor.bw, "
                "good_mid.rtt < mid_poor.rtt and good_mid.jitter < mid_poor.jitter"
            )


@dataclass(frozen=True)
class EncodingLevel:
    bitrate_kbps: int
    framerate_fps: int
    width_px: int
    height_px: int
    gop_frames: int

    def __post_init__(self) -> None:
        for name in ("bitrate_kbps", "framerate_fps", "width_px", "height_px", "gop_frames"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.width_px % 2 or self.height_px % 2:
            raise ValueError("width and height must be even")

    @property
    def frame_interval_ms(self) -> float:
        return 1000.0 / self.framerate_fps

    @property
    def resolution(self) -> str:
        return f"{self.width_px}x{self.height_px}"


@dataclass(frozen=True)
class EncodingLadder:
    good: EncodingLevel = EncodingLevel(4000, 30, 1920, 1080, 5)
    mid: EncodingLevel = EncodingLevel(2200, 15, 1920, 1080, 7)
    poor: EncodingLevel = EncodingLevel(700, 5, 640, 360, 5)

    def __post_init__(self) -> None:
        g, m, p = self.good, self.mid, self.poor
        if not g.bitrate_kbps > m.bitrate_kbps > p.bitrate_kbps:
            raise ValueError("ladder bitrates must strictly decrease Good > Mid > Poor")
        if not g.framerate_fps >= m.framerate_fps >= p.framerate_fps:
            raise ValueError("ladder framerates must not increase Good >= Mid >= Poor")
        if p.width_px > g.width_px or p.height_px > g.height_px:
            raise ValueError("Poor resolution must not exceed Good resolution")

    def level_of(self, settings: EncodingLevel) -> Optional[Level]:
        for level in (Level.GOOD, Level.MID, Level.POOR):
            if level_params(level, self) == settings:
                return level
        return None


DEFAULT_THRESHOLDS = Thresholds()
DEFAULT_LADDER = EncodingLadder()


@dataclass
class ControllerState:
    current_level: Level = Level.GOOD
    last_decision_at_ms: float = 0.0
    hold_down_ms: int = 0


def classify(metrics: PathMetrics, thresholds: Thresholds = DEFAULT_THRESHOLDS) -> Level:
    g, p = thresholds.good_mid, thresholds.mid_poor
    if (
        metrics.bandwidth_kbps >= g.bw_kbps
        and metrics.rtt_ms <= g.rtt_ms
        and metrics.jitter_ms <= g.jitter_ms
    ):
        return Level.GOOD
    # Poor needs a strict violation of at least one border value.
    if (
        metrics.bandwidth_kbps < p.bw_kbps
        or metrics.rtt_ms > p.rtt_ms
        or metrics.jitter_ms > p.jitter_ms
    ):
        return Level.POOR
    return Level.MID


def level_params(level: Level, ladder: EncodingLadder = DEFAULT_LADDER) -> EncodingLevel:
    if level is Level.GOOD:
        return ladder.good
    if level is Level.MID:
        return ladder.mid
    return ladder.poor


def combine(upload: PathMetrics, download: PathMetrics) -> PathMetrics:
    """Worst case of two path samples, componentwise."""
    return PathMetrics(
        bandwidth_kbps=min(upload.bandwidth_kbps, download.bandwidth_kbps),
        rtt_ms=max(upload.rtt_ms, download.rtt_ms),
        jitter_ms=max(upload.jitter_ms, download.jitter_ms),
        sampled_at_ms=max(upload.sampled_at_ms, download.sampled_at_ms),
    )


def decide(
    state: ControllerState,
    metrics: PathMetrics,
    thresholds: Thresholds = DEFAULT_THRESHOLDS,
    ladder: EncodingLadder = DEFAULT_LADDER,
    now_ms: float = 0.0,
) -> Optional[Tuple[Level, EncodingLevel]]:
    """Run one controller step; mutates ``state`` only when the level changes."""
    if now_ms < state.last_decision_at_ms:
        raise ValueError(
            f"decision time {now_ms} precedes last decision at {state.last_decision_at_ms}"
        )
    target = classify(metrics, thresholds)
    if target == state.current_level:
        return None
    if now_ms - state.last_decision_at_ms < state.hold_down_ms:
        return None
    state.current_level = target
    state.last_decision_at_ms = now_ms
    return target, level_params(target, ladder)
