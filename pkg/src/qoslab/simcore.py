"""Discrete-event engine and the three session topologies.

Nodes are the sender, an optional relay and the receiver. The uplink joins
sender and relay, the downlink joins relay and receiver; a direct session
runs both links in series with no relay endpoint in between.
"""

from __future__ import annotations

import bisect
import enum
import heapq
import math
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from .config import ScenarioConfig, ShapedPath, Topology
from .media import (
    EncoderModel,
    FrameDescriptor,
    Packet,
    TranscoderState,
    apply_settings,
    next_frame,
    packetize,
    transcode,
)
from .netem import Direction, ShapedLink, ShapingKind
from .rate_control import ControllerState, Level, PathMetrics, classify, combine, decide, level_params
from .rtcp import (
    EstimatorState,
    JitterState,
    PathId,
    ReceiverReport,
    ReportScheduler,
    Strategy,
    build_report,
    compute_rtt,
    estimate_bandwidth,
    update_jitter,
)

QUEUE_DELAY_WINDOW = 20  # report intervals kept for the base-transit minimum


class WiringError(RuntimeError):
    """A report reached an endpoint that the topology never routes it to."""


class EventKind(enum.IntEnum):
    FRAME_DUE = 0
    PACER_RELEASE = 1
    PACKET_DELIVERY = 2
    SENDER_REPORT_DUE = 3
    REPORT_DUE = 4
    REPORT_DELIVERY = 5
    DATA_CHANNEL_DELIVERY = 6
    SHAPING_CHANGE = 7
    SIM_END = 8


@dataclass(order=True)
class SimEvent:
    time_ms: float
    seq: int
    kind: EventKind = field(compare=False)
    payload: Any = field(compare=False, default=None)


# ---------------------------------------------------------------------------
# Trace


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return f"{value:.3f}"
    if isinstance(value, Level):
        return value.label
    if isinstance(value, enum.Enum):
        return str(value.value)
    return str(value)


@dataclass(frozen=True)
class TraceRecord:
    time_ms: float
    kind: str
    fields: Tuple[Tuple[str, Any], ...]

    def get(self, key: str, default: Any = None) -> Any:
        for k, v in self.fields:
            if k == key:
                return v
        return default

    def __getitem__(self, key: str) -> Any:
        for k, v in self.fields:
            if k == key:
                return v
        raise KeyError(key)

    def to_line(self) -> str:
        parts = [_fmt(self.time_ms), self.kind]
        parts.extend(f"{k}={_fmt(v)}" for k, v in self.fields)
        return "\t".join(parts)


@dataclass
class EventTrace:
    """Ordered record of everything observable in one run.

    Text form: one record per line, tab separated: ``time_ms``, ``kind``,
    then ``key=value`` pairs. Times are milliseconds with three decimals,
    booleans are 0/1 and levels are Good/Mid/Poor. A leading ``#`` line
    carries run metadata.
    """

    meta: Dict[str, Any] = field(default_factory=dict)
    records: List[TraceRecord] = field(default_factory=list)

    def add(self, time_ms: float, kind: str, **fields: Any) -> None:
        self.records.append(TraceRecord(time_ms, kind, tuple(fields.items())))

    def of_kind(self, *kinds: str) -> List[TraceRecord]:
        return [r for r in self.records if r.kind in kinds]

    def to_text(self) -> str:
        header = "# " + "\t".join(f"{k}={_fmt(v)}" for k, v in self.meta.items())
        return "\n".join([header] + [r.to_line() for r in self.records]) + "\n"

    def write(self, path: Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")


# ---------------------------------------------------------------------------
# Report routing


class Dispatch(enum.Enum):
    SENDER = "sender"
    RELAY = "relay"
    FORWARD = "forward"
    IGNORE = "none"


def dispatch_report(topology: Topology, path: PathId, transcoding: bool = True) -> Dispatch:
    """Where a report delivered on ``path`` is consumed."""
    if topology is Topology.DIRECT:
        if path is PathId.DIRECT:
            return Dispatch.SENDER
        raise WiringError(f"{path.value} report in a direct session")
    if path is PathId.DIRECT:
        raise WiringError(f"direct-path report in a {topology.value} session")
    if path is PathId.UPLOAD:
        return Dispatch.SENDER
    if topology is Topology.REPORTING_RELAY:
        return Dispatch.FORWARD
    return Dispatch.RELAY if transcoding else Dispatch.IGNORE


@dataclass(frozen=True)
class DataChannelMessage:
    report: ReceiverReport
    forwarded_at_ms: float


@dataclass(frozen=True)
class SenderReport:
    path: PathId
    sent_at_ms: float


@dataclass(slots=True)
class Transit:
    """A packet moving hop by hop along a route of (link, direction) legs."""

    packet: Packet
    route: Tuple[Tuple[ShapedLink, Direction], ...]
    hop: int
    on_arrival: Callable[[Packet, float], None]
    path: Optional["PathState"] = None


@dataclass
class PathState:
    """Receiver-side statistics plus sender-side report bookkeeping for one path."""

    path_id: PathId
    forward: Tuple[Tuple[ShapedLink, Direction], ...]
    reverse: Tuple[Tuple[ShapedLink, Direction], ...]
    estimator: EstimatorState
    scheduler: ReportScheduler
    sr_scheduler: ReportScheduler
    jitter: JitterState = field(default_factory=JitterState)
    seq: int = 0
    interval_bytes: int = 0
    interval_sent: int = 0
    interval_dropped: int = 0
    interval_transit_sum: float = 0.0
    interval_transit_n: int = 0
    interval_transit_min: float = math.inf
    min_transits: List[float] = field(default_factory=list)
    last_sr_sent: Optional[float] = None
    last_sr_arrival: float = 0.0
    last_rtt: float = 0.0
    active_from_ms: float = 0.0
    on_forward_arrival: Optional[Callable[[Packet, float], None]] = None
    on_reverse_arrival: Optional[Callable[[Packet, float], None]] = None


class Controller:
    def __init__(self, name: str, cfg: ScenarioConfig) -> None:
        self.name = name
        self.state = ControllerState(cfg.initial_level, 0.0, cfg.hold_down_ms)
        self.latest: Dict[PathId, PathMetrics] = {}


class Simulation:
    def __init__(self, cfg: ScenarioConfig) -> None:
        self.cfg = cfg
        self.now = 0.0
        self._heap: List[Tuple[float, int, int, Any]] = []
        self._seq = 0
        self.trace = EventTrace(
            meta={
                "scenario": cfg.name,
                "topology": cfg.topology.label,
                "estimator": cfg.estimator.strategy.value,
                "report_period_ms": cfg.report_period_ms,
                "shaping": cfg.shaping_kind.value,
                "shaped_path": cfg.shaped_path.value,
                "duration_s": float(cfg.duration_s),
                "seed": cfg.seed,
            }
        )
        self.end_ms = cfg.duration_s * 1000.0
        rng = random.Random(cfg.seed)
        self.relayed = cfg.topology is not Topology.DIRECT

        # Added latency delays what the shaped UE transmits: media on the
        # sender's uplink, feedback on the receiver's downlink.
        self.uplink = ShapedLink("uplink", cfg.unshaped_capacity_kbps, 0.0, cfg.base_latency_ms,
                                 cfg.queue_limit_bytes, Direction.FORWARD)
        self.downlink = ShapedLink("downlink", cfg.unshaped_capacity_kbps, 0.0, cfg.base_latency_ms,
                                   cfg.queue_limit_bytes, Direction.REVERSE)
        self.links = (self.uplink, self.downlink)
        self._capacity_history: Dict[str, List[Tuple[float, float]]] = {
            link.name: [(-math.inf, link.capacity_kbps)] for link in self.links
        }
        self._apply_shaping(cfg.schedule.value_at(0.0), 0.0, record=False)

        initial = level_params(cfg.initial_level, cfg.ladder)
        self.encoder = EncoderModel(
            initial,
            keyframe_weight=cfg.keyframe_weight,
            size_jitter=cfg.size_jitter,
            rng=random.Random(rng.getrandbits(64)),
        )
        self._encoder_epoch = 0
        self.sender_ctl = Controller("sender", cfg)
        self.relay_ctl = Controller("relay", cfg) if self.relayed else None
        self.transcoder = None
        if cfg.topology is Topology.TRANSCODING_RELAY and cfg.transcoding:
            self.transcoder = TranscoderState(
                EncoderModel(
                    initial,
                    keyframe_weight=cfg.keyframe_weight,
                    size_jitter=cfg.size_jitter,
                    rng=random.Random(rng.getrandbits(64)),
                )
            )
        self._relay_target = initial
        # Pacer horizon per sending node.
        self._pacer_free = {"sender": 0.0, "relay": 0.0}
        self._reassembly: Dict[Tuple[str, int], Tuple[int, FrameDescriptor]] = {}
        # Emission instant of each frame by whichever node encoded it last.
        self._encoded_at: Dict[int, Tuple[float, FrameDescriptor]] = {}

        up_f = ((self.uplink, Direction.FORWARD),)
        up_r = ((self.uplink, Direction.REVERSE),)
        dn_f = ((self.downlink, Direction.FORWARD),)
        dn_r = ((self.downlink, Direction.REVERSE),)
        period = cfg.report_period_ms

        def path(pid, fwd, rev, on_fwd, on_rev, start=0.0):
            return PathState(
                pid,
                fwd,
                rev,
                cfg.estimator,
                ReportScheduler(period, phase_ms=start),
                # Sender reports run half a period out of phase with receiver reports.
                ReportScheduler(period, phase_ms=start - period / 2.0),
                active_from_ms=start,
                on_forward_arrival=on_fwd,
                on_reverse_arrival=on_rev,
            )

        if self.relayed:
            self.up_path = path(PathId.UPLOAD, up_f, up_r, self._on_media_at_relay, self._at_sender)
            self.down_path = path(PathId.DOWNLOAD, dn_f, dn_r, self._on_media_at_receiver,
                                  self._at_relay_feedback, cfg.relay_setup_delay_ms)
            self.paths = (self.up_path, self.down_path)
        else:
            self.direct_path = path(PathId.DIRECT, up_f + dn_f, dn_r + up_r, self._on_media_at_receiver, self._at_sender)
            self.paths = (self.direct_path,)
        self._path_by_id = {p.path_id: p for p in self.paths}
        self._dc_route = up_r

    # -- scheduling -------------------------------------------------------

    def schedule(self, time_ms: float, kind: EventKind, payload: Any = None) -> None:
        if time_ms < self.now:
            raise RuntimeError(f"event {kind.name} scheduled in the past ({time_ms} < {self.now})")
        self._seq += 1
        heapq.heappush(self._heap, (time_ms, self._seq, kind, payload))

    def run(self) -> EventTrace:
        cfg = self.cfg
        for t_s, value in cfg.schedule.boundaries(cfg.duration_s):
            self.schedule(t_s * 1000.0, EventKind.SHAPING_CHANGE, value)
        self.schedule(self.encoder.next_frame_at_ms, EventKind.FRAME_DUE, self._encoder_epoch)
        for p in self.paths:
            self.schedule(p.scheduler.next_due_ms, EventKind.REPORT_DUE, p)
            self.schedule(p.sr_scheduler.next_due_ms, EventKind.SENDER_REPORT_DUE, p)

        handlers = {
            EventKind.FRAME_DUE: self._on_frame_due,
            EventKind.PACER_RELEASE: self._on_pacer_release,
            EventKind.PACKET_DELIVERY: self._on_packet_delivery,
            EventKind.SENDER_REPORT_DUE: self._on_sender_report_due,
            EventKind.REPORT_DUE: self._on_report_due,
            EventKind.SHAPING_CHANGE: self._on_shaping_change,
        }
        heap = self._heap
        end = self.end_ms
        while heap and heap[0][0] <= end:
            time_ms, _, kind, payload = heapq.heappop(heap)
            self.now = time_ms
            handlers[kind](payload)
        self.now = end
        self.trace.add(
            end,
            "SimEnd",
            **{f"{l.name}_sent": l.sent_count for l in self.links},
            **{f"{l.name}_dropped": l.drop_count for l in self.links},
            **{f"{l.name}_delivered": l.delivered_count for l in self.links},
        )
        return self.trace

    # -- shaping ----------------------------------------------------------

    def _shaped_links(self, kind: ShapingKind) -> Tuple[ShapedLink, ...]:
        sp = self.cfg.shaped_path
        if sp is ShapedPath.UPLINK:
            return (self.uplink,)
        if sp is ShapedPath.DOWNLINK:
            return (self.downlink,)
        if kind is ShapingKind.LATENCY and not self.relayed:
            # The series path gets the added latency once, end to end.
            return (self.downlink,)
        return self.links

    def _apply_shaping(self, value: float, now: float, record: bool = True) -> List[ShapedLink]:
        kind = self.cfg.shaping_kind
        targets = self._shaped_links(kind)
        for link in targets:
            if kind is ShapingKind.BANDWIDTH:
                retimed = link.set_shaping(now, capacity_kbps=value)
                self._capacity_history[link.name].append((now, value))
            else:
                retimed = link.set_shaping(now, added_latency_ms=value)
            if record:
                for entry in retimed:
                    self.schedule(entry.deliver_ms, EventKind.PACKET_DELIVERY, (entry, entry.ticket))
        return list(targets)

    def _on_shaping_change(self, value: float) -> None:
        targets = self._apply_shaping(value, self.now)
        self.trace.add(
            self.now,
            "ShapingChange",
            shaping=self.cfg.shaping_kind,
            value=float(value),
            links=",".join(l.name for l in targets),
        )

    def capacity_at(self, link: ShapedLink, t_ms: float) -> float:
        hist = self._capacity_history[link.name]
        # Changes at exactly t_ms are already in effect.
        i = bisect.bisect_right(hist, (t_ms, math.inf)) - 1
        return hist[i][1]

    # -- packet transport -------------------------------------------------

    def _send(self, transit: Transit) -> None:
        link, direction = transit.route[transit.hop]
        entry = link.enqueue(transit.packet, self.now, direction, context=transit)
        if entry is None:
            if transit.path is not None and transit.packet.frame is not None:
                transit.path.interval_dropped += 1
            self.trace.add(
                self.now,
                "Drop",
                link=link.name,
                dir=direction.name.lower(),
                bytes=transit.packet.payload_bytes,
                media=transit.packet.frame is not None,
            )
            return
        self.schedule(entry.deliver_ms, EventKind.PACKET_DELIVERY, (entry, entry.ticket))

    def _on_packet_delivery(self, payload) -> None:
        entry, ticket = payload
        if entry.ticket != ticket:
            return
        transit: Transit = entry.context
        transit.route[transit.hop][0].delivered_count += 1
        transit.hop += 1
        if transit.hop < len(transit.route):
            self._send(transit)
        else:
            transit.on_arrival(transit.packet, self.now)

    # -- media ------------------------------------------------------------

    def _pace(self, node: str, packets: Sequence[Packet], bitrate_kbps: int, route, on_arrival, path: PathState) -> None:
        rate = self.cfg.pacing_factor * bitrate_kbps
        t = max(self.now, self._pacer_free[node])
        for pkt in packets:
            pkt.send_time_ms = t
            self.schedule(t, EventKind.PACER_RELEASE, Transit(pkt, route, 0, on_arrival, path))
            t += pkt.payload_bytes * 8 / rate
        self._pacer_free[node] = t

    def _on_pacer_release(self, transit: Transit) -> None:
        if transit.path is not None:
            transit.path.interval_sent += 1
        self._send(transit)

    def _on_frame_due(self, epoch: int) -> None:
        if epoch != self._encoder_epoch:
            return
        frame = next_frame(self.encoder, self.now)
        self._record_frame_sent("sender", frame)
        packets = packetize(frame, self.cfg.mtu_payload_bytes)
        if self.relayed:
            self._pace("sender", packets, frame.settings.bitrate_kbps, self.up_path.forward,
                       self._on_media_at_relay, self.up_path)
        else:
            self._pace("sender", packets, frame.settings.bitrate_kbps, self.direct_path.forward,
                       self._on_media_at_receiver, self.direct_path)
        self.schedule(self.encoder.next_frame_at_ms, EventKind.FRAME_DUE, self._encoder_epoch)

    def _record_frame_sent(self, node: str, frame: FrameDescriptor) -> None:
        self._encoded_at[id(frame)] = (self.now, frame)
        self.trace.add(
            self.now,
            "FrameSent",
            node=node,
            frame=frame.frame_seq,
            level=self.cfg.ladder.level_of(frame.settings),
            key=frame.is_keyframe,
            headers=frame.carries_headers,
            bytes=frame.size_bytes,
        )

    def _receive_media(self, path: PathState, pkt: Packet, now: float) -> None:
        transit = now - pkt.send_time_ms
        path.jitter = update_jitter(path.jitter, transit)
        path.interval_bytes += pkt.payload_bytes
        path.interval_transit_sum += transit
        path.interval_transit_n += 1
        if transit < path.interval_transit_min:
            path.interval_transit_min = transit

    def _reassemble(self, node: str, pkt: Packet) -> bool:
        # The stored frame reference keeps id() unique while the entry lives.
        key = (node, id(pkt.frame))
        slot = self._reassembly.get(key)
        got = (slot[0] if slot else 0) + 1
        if got == pkt.fragment_count:
            self._reassembly.pop(key, None)
            return True
        self._reassembly[key] = (got, pkt.frame)
        return False

    def _on_media_at_relay(self, pkt: Packet, now: float) -> None:
        if pkt.message is not None:
            self._on_message(pkt, now, "relay")
            return
        self._receive_media(self.up_path, pkt, now)
        complete = self._reassemble("relay", pkt)
        if complete:
            frame = pkt.frame
            self.trace.add(
                now,
                "FrameArrival",
                node="relay",
                frame=frame.frame_seq,
                level=self.cfg.ladder.level_of(frame.settings),
                key=frame.is_keyframe,
                headers=frame.carries_headers,
                bytes=frame.size_bytes,
                latency=now - frame.watermark_ms,
            )
        if now < self.cfg.relay_setup_delay_ms:
            return
        if self.transcoder is None:
            # Selective forwarding: packet by packet, no re-encoding.
            out = Packet(pkt.payload_bytes, pkt.frame_seq, pkt.fragment_index, pkt.fragment_count, now, pkt.frame)
            self.down_path.interval_sent += 1
            self._send(Transit(out, self.down_path.forward, 0, self._on_media_at_receiver, self.down_path))
            return
        if complete:
            out_frame = transcode(pkt.frame, self._relay_target, self.transcoder)
            if out_frame is None:
                return
            if out_frame is not pkt.frame:
                self._record_frame_sent("relay", out_frame)
            else:
                # Forwarded untouched, but its place in the relay's output follows the relay clock.
                self._encoded_at[id(out_frame)] = (now, out_frame)
            self._pace("relay", packetize(out_frame, self.cfg.mtu_payload_bytes), out_frame.settings.bitrate_kbps,
                       self.down_path.forward, self._on_media_at_receiver, self.down_path)

    def _on_media_at_receiver(self, pkt: Packet, now: float) -> None:
        if pkt.message is not None:
            self._on_message(pkt, now, "receiver")
            return
        path = self.down_path if self.relayed else self.direct_path
        self._receive_media(path, pkt, now)
        if self._reassemble("receiver", pkt):
            frame = pkt.frame
            self.trace.add(
                now,
                "FrameArrival",
                node="receiver",
                frame=frame.frame_seq,
                level=self.cfg.ladder.level_of(frame.settings),
                key=frame.is_keyframe,
                headers=frame.carries_headers,
                bytes=frame.size_bytes,
                latency=now - frame.watermark_ms,
                encoded_at=self._encoded_at.pop(id(frame), (frame.watermark_ms, None))[0],
            )

    # -- feedback ---------------------------------------------------------

    def _on_sender_report_due(self, path: PathState) -> None:
        path.sr_scheduler.advance()
        self.schedule(path.sr_scheduler.next_due_ms, EventKind.SENDER_REPORT_DUE, path)
        msg = Packet(self.cfg.message_bytes, send_time_ms=self.now, message=SenderReport(path.path_id, self.now))
        self._send(Transit(msg, path.forward, 0, path.on_forward_arrival))

    def _on_report_due(self, path: PathState) -> None:
        path.scheduler.advance()
        self.schedule(path.scheduler.next_due_ms, EventKind.REPORT_DUE, path)
        now = self.now
        period = self.cfg.report_period_ms
        throughput = path.interval_bytes * 8 / period
        queue_delay = 0.0
        if path.interval_transit_n:
            path.min_transits.append(path.interval_transit_min)
            del path.min_transits[:-QUEUE_DELAY_WINDOW]
            mean = path.interval_transit_sum / path.interval_transit_n
            queue_delay = max(0.0, mean - min(path.min_transits))
        loss = min(1.0, path.interval_dropped / path.interval_sent) if path.interval_sent else 0.0
        lag = path.estimator.oracle_lag_ms if path.estimator.strategy is Strategy.ORACLE else 0
        capacity = min(self.capacity_at(link, now - lag) for link, _ in path.forward)
        path.estimator = estimate_bandwidth(path.estimator, throughput, queue_delay, loss, capacity)
        lsr, dlsr = None, 0.0
        if path.last_sr_sent is not None:
            lsr, dlsr = path.last_sr_sent, now - path.last_sr_arrival
        # RTT is filled in by the consumer from the lsr/dlsr echo; 0 until then.
        report = build_report(path.jitter, path.estimator, 0.0, loss, path.path_id, now, path.seq, lsr, dlsr)
        path.seq = report.seq
        self.trace.add(
            now,
            "ReportDue",
            path=path.path_id,
            seq=report.seq,
            bw=report.metrics.bandwidth_kbps,
            jitter=report.metrics.jitter_ms,
            loss=loss,
            throughput=throughput,
        )
        path.interval_bytes = path.interval_sent = path.interval_dropped = 0
        path.interval_transit_sum = 0.0
        path.interval_transit_n = 0
        path.interval_transit_min = math.inf
        msg = Packet(self.cfg.message_bytes, send_time_ms=now, message=report)
        self._send(Transit(msg, path.reverse, 0, path.on_reverse_arrival))

    def _at_sender(self, pkt: Packet, now: float) -> None:
        self._on_message(pkt, now, "sender")

    def _at_relay_feedback(self, pkt: Packet, now: float) -> None:
        self._on_message(pkt, now, "relay")

    def _on_message(self, pkt: Packet, now: float, node: str) -> None:
        msg = pkt.message
        if isinstance(msg, SenderReport):
            path = self._path_by_id[msg.path]
            path.last_sr_sent = msg.sent_at_ms
            path.last_sr_arrival = now
            return
        if isinstance(msg, DataChannelMessage):
            report = msg.report
            self.trace.add(
                now,
                "DataChannelDelivery",
                node=node,
                path=report.path_id,
                seq=report.seq,
                emitted_at=report.metrics.sampled_at_ms,
                forwarded_at=msg.forwarded_at_ms,
                delay=now - report.metrics.sampled_at_ms,
            )
            self._consume(self.sender_ctl, report.path_id, report.metrics)
            return
        report: ReceiverReport = msg
        path = self._path_by_id[report.path_id]
        if report.lsr_ms is not None:
            path.last_rtt = compute_rtt(now, report.lsr_ms, report.dlsr_ms)
        metrics = replace(report.metrics, rtt_ms=path.last_rtt)
        report = replace(report, metrics=metrics)
        self.trace.add(
            now,
            "ReportDelivery",
            node=node,
            path=report.path_id,
            seq=report.seq,
            bw=metrics.bandwidth_kbps,
            rtt=metrics.rtt_ms,
            jitter=metrics.jitter_ms,
            loss=report.loss_fraction,
            emitted_at=metrics.sampled_at_ms,
        )
        route = dispatch_report(self.cfg.topology, report.path_id, self.cfg.transcoding)
        if route is Dispatch.SENDER:
            self._consume(self.sender_ctl, report.path_id, metrics)
        elif route is Dispatch.RELAY:
            self._consume(self.relay_ctl, report.path_id, metrics)
        elif route is Dispatch.FORWARD:
            wrapped = Packet(self.cfg.message_bytes, send_time_ms=now, message=DataChannelMessage(report, now))
            self._send(Transit(wrapped, self._dc_route, 0, self._at_sender))

    def _consume(self, ctl: Controller, path_id: PathId, metrics: PathMetrics) -> None:
        ctl.latest[path_id] = metrics
        if ctl is self.sender_ctl and self.cfg.topology is Topology.REPORTING_RELAY:
            up = ctl.latest.get(PathId.UPLOAD)
            down = ctl.latest.get(PathId.DOWNLOAD)
            if up is not None and down is not None:
                metrics = combine(up, down)
        before = ctl.state.current_level
        level = classify(metrics, self.cfg.thresholds)
        self.trace.add(
            self.now,
            "Consume",
            actor=ctl.name,
            path=path_id,
            level=level,
            current=before,
            bw=metrics.bandwidth_kbps,
            rtt=metrics.rtt_ms,
            jitter=metrics.jitter_ms,
        )
        outcome = decide(ctl.state, metrics, self.cfg.thresholds, self.cfg.ladder, self.now)
        if outcome is None:
            return
        new_level, params = outcome
        self.trace.add(self.now, "Decision", actor=ctl.name, path=path_id, level_from=before, level_to=new_level,
                       emitted_at=metrics.sampled_at_ms)
        if ctl is self.sender_ctl:
            apply_settings(self.encoder, params, self.now)
            self._encoder_epoch += 1
            self.schedule(self.encoder.next_frame_at_ms, EventKind.FRAME_DUE, self._encoder_epoch)
        else:
            self._relay_target = params
            self.transcoder.retarget(params, self.now)


def run(cfg: ScenarioConfig) -> EventTrace:
    """Execute one scenario; identical configs give identical traces."""
    return Simulation(cfg).run()


def relay_forwarding_latency(trace: EventTrace) -> List[float]:
    """Per forwarded download report: arrival at the sender minus emission at the receiver."""
    return [r["delay"] for r in trace.of_kind("DataChannelDelivery")]
