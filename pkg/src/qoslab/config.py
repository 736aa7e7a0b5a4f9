"""Scenario configuration: defaults, TOML loading, overrides and validation.

Precedence is flags > file > defaults. Every key must be known and typed
correctly; problems raise :class:`ConfigError` naming the key and its source.
"""

from __future__ import annotations

import copy
import enum
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .netem import ShapingKind, ShapingSchedule, schedule_from_table
from .rate_control import Border, EncodingLadder, EncodingLevel, Level, Thresholds
from .rtcp import EstimatorState, Strategy


class ConfigError(ValueError):
    pass


class Topology(enum.Enum):
    DIRECT = "direct"
    TRANSCODING_RELAY = "transcoding"
    REPORTING_RELAY = "reporting"

    @property
    def label(self) -> str:
        return {"direct": "Direct", "transcoding": "TranscodingRelay", "reporting": "ReportingRelay"}[self.value]


class ShapedPath(enum.Enum):
    UPLINK = "uplink"
    DOWNLINK = "downlink"
    BOTH = "both"


def _ladder_entry(bitrate, fps, w, h, gop):
    return {"bitrate_kbps": bitrate, "framerate_fps": fps, "width_px": w, "height_px": h, "gop_frames": gop}


DEFAULTS: Dict[str, Any] = {
    "scenario": {
        "name": "default",
        "topology": "direct",
        "transcoding": True,
        "duration_s": 100.0,
        "seed": 0,
        "report_period_ms": 500,
        "hold_down_ms": 0,
        "initial_level": "Good",
        "relay_setup_delay_ms": 0.0,
    },
    "shaping": {
        "kind": "bandwidth",
        # "auto": both links for direct sessions, downlink for relays.
        "path": "auto",
        # Empty means the built-in table for ``kind``; else [[start_s, value], ...].
        "schedule": [],
        "cycle_s": 0.0,
        "unshaped_capacity_kbps": math.inf,
        "base_latency_ms": 10.0,
        "queue_limit_bytes": 2_000_000,
    },
    "estimator": {
        "strategy": "oracle",
        "initial_kbps": 10000.0,
        "oracle_lag_ms": 100,
        "increase_factor": 1.08,
        "decrease_factor": 0.85,
        "queue_delay_threshold_ms": 50.0,
        "est_cap_kbps": 200000.0,
    },
    "thresholds": {
        "good_mid": {"bw": 10000.0, "rtt": 90.0, "jitter": 2.0},
        "mid_poor": {"bw": 5000.0, "rtt": 180.0, "jitter": 8.0},
    },
    "ladder": {
        "good": _ladder_entry(4000, 30, 1920, 1080, 5),
        "mid": _ladder_entry(2200, 15, 1920, 1080, 7),
        "poor": _ladder_entry(700, 5, 640, 360, 5),
    },
    "media": {
        "keyframe_weight": 4.0,
        "size_jitter": 0.0,
        "mtu_payload_bytes": 1200,
        "pacing_factor": 2.5,
        "message_bytes": 128,
    },
    "output": {
        "dir": "",
    },
}


def _type_ok(default: Any, value: Any) -> bool:
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, list):
        return isinstance(value, list)
    return isinstance(value, type(default))


def merge(base: Dict[str, Any], update: Mapping[str, Any], source: str, prefix: str = "") -> Dict[str, Any]:
    """Return ``base`` overlaid with ``update``; unknown keys and type mismatches raise."""
    out = copy.deepcopy(base)
    for key, value in update.items():
        dotted = f"{prefix}{key}"
        if key not in out:
            raise ConfigError(f"unknown key '{dotted}' in {source}")
        default = out[key]
        if isinstance(default, dict):
            if not isinstance(value, Mapping):
                raise ConfigError(f"key '{dotted}' in {source} must be a table")
            out[key] = merge(default, value, source, dotted + ".")
            continue
        if not _type_ok(default, value):
            raise ConfigError(
                f"key '{dotted}' in {source} expects {type(default).__name__}, got {value!r}"
            )
        out[key] = float(value) if isinstance(default, float) else value
    return out


def load_file(path: Path) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc


def set_dotted(tree: Dict[str, Any], dotted: str, value: Any) -> None:
    node = tree
    parts = dotted.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value


def resolve(file_values: Optional[Mapping[str, Any]] = None, overrides: Optional[Mapping[str, Any]] = None,
            source: str = "config file") -> "ScenarioConfig":
    tree = DEFAULTS
    if file_values:
        tree = merge(tree, file_values, source)
    if overrides:
        tree = merge(tree, overrides, "command-line flags")
    return ScenarioConfig.from_tree(tree)


def dump_toml(tree: Mapping[str, Any]) -> str:
    return tomli_w.dumps(tree)


@dataclass(frozen=True)
class ScenarioConfig:
    tree: Dict[str, Any]
    name: str
    topology: Topology
    transcoding: bool
    duration_s: float
    seed: int
    report_period_ms: int
    hold_down_ms: int
    initial_level: Level
    relay_setup_delay_ms: float
    shaping_kind: ShapingKind
    shaped_path: ShapedPath
    schedule: ShapingSchedule
    unshaped_capacity_kbps: float
    base_latency_ms: float
    queue_limit_bytes: int
    estimator: EstimatorState
    thresholds: Thresholds
    ladder: EncodingLadder
    keyframe_weight: float
    size_jitter: float
    mtu_payload_bytes: int
    pacing_factor: float
    message_bytes: int
    out_dir: str

    @classmethod
    def from_tree(cls, tree: Dict[str, Any]) -> "ScenarioConfig":
        sc, sh, es, th, ld, md = (tree[k] for k in ("scenario", "shaping", "estimator", "thresholds", "ladder", "media"))

        def choice(enum_cls, key, value):
            try:
                return enum_cls(value)
            except ValueError:
                allowed = ", ".join(m.value for m in enum_cls)
                raise ConfigError(f"key '{key}' must be one of {allowed}; got {value!r}") from None

        topology = choice(Topology, "scenario.topology", sc["topology"])
        kind = choice(ShapingKind, "shaping.kind", sh["kind"])
        if sh["path"] == "auto":
            shaped_path = ShapedPath.BOTH if topology is Topology.DIRECT else ShapedPath.DOWNLINK
        else:
            shaped_path = choice(ShapedPath, "shaping.path", sh["path"])
        strategy = choice(Strategy, "estimator.strategy", es["strategy"])
        try:
            initial_level = Level.parse(sc["initial_level"])
        except KeyError:
            raise ConfigError(f"key 'scenario.initial_level' must be Good, Mid or Poor; got {sc['initial_level']!r}") from None

        if sh["schedule"]:
            try:
                pairs = [(float(a), float(b)) for a, b in sh["schedule"]]
                schedule = ShapingSchedule.from_pairs(kind, pairs, sh["cycle_s"] or None)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"key 'shaping.schedule' is invalid: {exc}") from None
        else:
            schedule = schedule_from_table(kind)

        try:
            estimator = EstimatorState(
                strategy=strategy,
                est_kbps=es["initial_kbps"],
                oracle_lag_ms=es["oracle_lag_ms"],
                increase_factor=es["increase_factor"],
                decrease_factor=es["decrease_factor"],
                queue_delay_threshold_ms=es["queue_delay_threshold_ms"],
                est_cap_kbps=es["est_cap_kbps"],
            )
        except ValueError as exc:
            raise ConfigError(f"section 'estimator': {exc}") from None
        try:
            thresholds = Thresholds(
                Border(th["good_mid"]["bw"], th["good_mid"]["rtt"], th["good_mid"]["jitter"]),
                Border(th["mid_poor"]["bw"], th["mid_poor"]["rtt"], th["mid_poor"]["jitter"]),
            )
        except ValueError as exc:
            raise ConfigError(f"section 'thresholds': {exc}") from None
        try:
            ladder = EncodingLadder(**{lvl: EncodingLevel(**ld[lvl]) for lvl in ("good", "mid", "poor")})
        except ValueError as exc:
            raise ConfigError(f"section 'ladder': {exc}") from None

        for key, value, ok in (
            ("scenario.duration_s", sc["duration_s"], sc["duration_s"] > 0),
            ("scenario.report_period_ms", sc["report_period_ms"], sc["report_period_ms"] > 0),
            ("scenario.hold_down_ms", sc["hold_down_ms"], sc["hold_down_ms"] >= 0),
            ("scenario.relay_setup_delay_ms", sc["relay_setup_delay_ms"], sc["relay_setup_delay_ms"] >= 0),
            ("shaping.unshaped_capacity_kbps", sh["unshaped_capacity_kbps"], sh["unshaped_capacity_kbps"] > 0),
            ("shaping.base_latency_ms", sh["base_latency_ms"], sh["base_latency_ms"] >= 0),
            ("shaping.queue_limit_bytes", sh["queue_limit_bytes"], sh["queue_limit_bytes"] > 0),
            ("media.keyframe_weight", md["keyframe_weight"], md["keyframe_weight"] >= 1),
            ("media.size_jitter", md["size_jitter"], 0 <= md["size_jitter"] < 1),
            ("media.mtu_payload_bytes", md["mtu_payload_bytes"], md["mtu_payload_bytes"] >= 1),
            ("media.pacing_factor", md["pacing_factor"], md["pacing_factor"] > 0),
            ("media.message_bytes", md["message_bytes"], md["message_bytes"] >= 1),
        ):
            if not ok:
                raise ConfigError(f"key '{key}' has out-of-range value {value!r}")

        return cls(
            tree=copy.deepcopy(tree),
            name=sc["name"],
            topology=topology,
            transcoding=sc["transcoding"],
            duration_s=sc["duration_s"],
            seed=sc["seed"],
            report_period_ms=sc["report_period_ms"],
            hold_down_ms=sc["hold_down_ms"],
            initial_level=initial_level,
            relay_setup_delay_ms=sc["relay_setup_delay_ms"],
            shaping_kind=kind,
            shaped_path=shaped_path,
            schedule=schedule,
            unshaped_capacity_kbps=sh["unshaped_capacity_kbps"],
            base_latency_ms=sh["base_latency_ms"],
            queue_limit_bytes=sh["queue_limit_bytes"],
            estimator=estimator,
            thresholds=thresholds,
            ladder=ladder,
            keyframe_weight=md["keyframe_weight"],
            size_jitter=md["size_jitter"],
            mtu_payload_bytes=md["mtu_payload_bytes"],
            pacing_factor=md["pacing_factor"],
            message_bytes=md["message_bytes"],
            out_dir=tree["output"]["dir"],
        )

    def with_overrides(self, overrides: Mapping[str, Any]) -> "ScenarioConfig":
        return ScenarioConfig.from_tree(merge(self.tree, overrides, "overrides"))

    def to_toml(self) -> str:
        return dump_toml(self.tree)
