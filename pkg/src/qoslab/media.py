"""Video source, encoder, packetizer and relay transcoder models.

Frames carry no pixels: only their size, GOP position, the settings they were
encoded with and a watermark holding the capture instant.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace
from typing import List, Optional

from .rate_control import EncodingLevel

DEFAULT_KEYFRAME_WEIGHT = 4.0
DEFAULT_MTU_PAYLOAD = 1200


@dataclass(frozen=True)
class FrameDescriptor:
    frame_seq: int
    size_bytes: int
    is_keyframe: bool
    carries_headers: bool
    settings: EncodingLevel
    watermark_ms: float
    pts_ms: float

    def __post_init__(self) -> None:
        if self.carries_headers and not self.is_keyframe:
            raise ValueError("only keyframes may carry parameter-set headers")
        if self.size_bytes < 1:
            raise ValueError("frame size must be positive")


@dataclass(slots=True)
class Packet:
    payload_bytes: int
    frame_seq: int = -1
    fragment_index: int = 0
    fragment_count: int = 1
    send_time_ms: float = 0.0
    frame: Optional[FrameDescriptor] = None
    # Non-media payloads (sender/receiver reports, data-channel messages).
    message: object = None


def frame_size(settings: EncodingLevel, is_keyframe: bool, keyframe_weight: float = DEFAULT_KEYFRAME_WEIGHT) -> int:
    """Bytes for one frame such that a whole GOP averages the target bitrate."""
    n = settings.gop_frames
    avg_bits = settings.bitrate_kbps * 1000.0 / settings.framerate_fps
    delta_bits = avg_bits * n / (keyframe_weight + n - 1)
    bits = keyframe_weight * delta_bits if is_keyframe else delta_bits
    return max(1, round(bits / 8.0))


@dataclass
class EncoderModel:
    current: EncodingLevel
    frames_into_gop: int = 0
    keyframe_weight: float = DEFAULT_KEYFRAME_WEIGHT
    next_frame_at_ms: float = 0.0
    size_jitter: float = 0.0
    rng: random.Random = field(default_factory=lambda: random.Random(0))
    frame_seq: int = 0
    headers_pending: bool = True
    # Frame instants sit on the grid k * 1000 / fps of the current framerate.
    grid_index: int = 0

    def __post_init__(self) -> None:
        if self.keyframe_weight < 1:
            raise ValueError("keyframe_weight must be >= 1")
        if not 0.0 <= self.size_jitter < 1.0:
            raise ValueError("size_jitter must lie in [0, 1)")
        self.grid_index = math.ceil(self.next_frame_at_ms * self.current.framerate_fps / 1000.0 - 1e-9)
        self.next_frame_at_ms = self.grid_index * 1000.0 / self.current.framerate_fps


def next_frame(enc: EncoderModel, now_ms: float) -> FrameDescriptor:
    if abs(now_ms - enc.next_frame_at_ms) > 1e-6:
        raise ValueError(f"frame requested at {now_ms}, encoder due at {enc.next_frame_at_ms}")
    settings = enc.current
    is_key = enc.frames_into_gop == 0
    size = frame_size(settings, is_key, enc.keyframe_weight)
    if enc.size_jitter:
        size = max(1, round(size * enc.rng.uniform(1.0 - enc.size_jitter, 1.0 + enc.size_jitter)))
    frame = FrameDescriptor(
        frame_seq=enc.frame_seq,
        size_bytes=size,
        is_keyframe=is_key,
        carries_headers=is_key and enc.headers_pending,
        settings=settings,
        watermark_ms=now_ms,
        pts_ms=now_ms,
    )
    enc.frame_seq += 1
    enc.headers_pending = False
    enc.frames_into_gop = (enc.frames_into_gop + 1) % settings.gop_frames
    enc.grid_index += 1
    enc.next_frame_at_ms = enc.grid_index * 1000.0 / settings.framerate_fps
    return frame


def apply_settings(enc: EncoderModel, new: EncodingLevel, now_ms: float) -> EncoderModel:
    """Switch settings and restart the GOP; the next frame is a header-carrying keyframe.

    The GOP restarts even when ``new`` equals the current settings.
    """
    enc.current = new
    enc.frames_into_gop = 0
    enc.headers_pending = True
    # First grid instant of the new framerate strictly after now.
    enc.grid_index = math.floor(now_ms * new.framerate_fps / 1000.0 + 1e-9) + 1
    enc.next_frame_at_ms = enc.grid_index * 1000.0 / new.framerate_fps
    return enc


def packetize(frame: FrameDescriptor, mtu_payload_bytes: int = DEFAULT_MTU_PAYLOAD, send_time_ms: float = 0.0) -> List[Packet]:
    if mtu_payload_bytes < 1:
        raise ValueError("mtu_payload_bytes must be >= 1")
    count = -(-frame.size_bytes // mtu_payload_bytes)
    packets = []
    for i in range(count):
        size = mtu_payload_bytes if i < count - 1 else frame.size_bytes - mtu_payload_bytes * (count - 1)
        packets.append(
            Packet(
                payload_bytes=size,
                frame_seq=frame.frame_seq,
                fragment_index=i,
                fragment_count=count,
                send_time_ms=send_time_ms,
                frame=frame,
            )
        )
    return packets


@dataclass
class TranscoderState:
    """Relay-side re-encoder driven by the relay's own controller."""

    encoder: EncoderModel
    input_count: int = 0
    last_output: Optional[EncodingLevel] = None

    def retarget(self, target: EncodingLevel, now_ms: float) -> None:
        apply_settings(self.encoder, target, now_ms)
        self.input_count = 0


def transcode(frame: FrameDescriptor, target: EncodingLevel, state: TranscoderState) -> Optional[FrameDescriptor]:
    """Re-emit ``frame`` at ``target`` or drop it while subsampling.

    Frames already at or below the target bitrate are passed through, since a
    relay cannot add back quality the sender never encoded. The first frame
    after a retarget is always re-encoded as a header-carrying keyframe.
    """
    enc = state.encoder
    out_settings = frame.settings if frame.settings.bitrate_kbps <= target.bitrate_kbps else target
    if out_settings == frame.settings and not enc.headers_pending:
        state.last_output = frame.settings
        return frame
    step = max(1, frame.settings.framerate_fps // out_settings.framerate_fps)
    keep = state.input_count % step == 0
    state.input_count += 1
    if not keep:
        return None
    if enc.current != out_settings or state.last_output != out_settings:
        enc.current = out_settings
        enc.frames_into_gop = 0
        enc.headers_pending = True
    is_key = enc.frames_into_gop == 0
    size = frame_size(out_settings, is_key, enc.keyframe_weight)
    if enc.size_jitter:
        size = max(1, round(size * enc.rng.uniform(1.0 - enc.size_jitter, 1.0 + enc.size_jitter)))
    out = replace(
        frame,
        frame_seq=enc.frame_seq,
        size_bytes=size,
        is_keyframe=is_key,
        carries_headers=is_key and enc.headers_pending,
        settings=out_settings,
    )
    enc.frame_seq += 1
    enc.headers_pending = False
    enc.frames_into_gop = (enc.frames_into_gop + 1) % out_settings.gop_frames
    state.last_output = out_settings
    return out


def extract_watermark(frame: FrameDescriptor, arrival_ms: float) -> float:
    latency = arrival_ms - frame.watermark_ms
    if latency < 0:
        raise ValueError(f"frame {frame.frame_seq} arrived before its watermark")
    return latency
