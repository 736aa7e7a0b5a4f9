"""Reaction-time extraction and summaries over an event trace."""

from __future__ import annotations

import csv
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

from .rate_control import Level
from .simcore import EventTrace, TraceRecord

CSV_COLUMNS = (
    "scenario",
    "topology",
    "estimator",
    "report_period_ms",
    "change_idx",
    "t_change_ms",
    "t_decision_ms",
    "reaction_ms",
    "t_received_ms",
    "update_ms",
    "level_from",
    "level_to",
    "censored",
)


class TraceError(ValueError):
    """The trace violates a structural expectation (e.g. a decision without input)."""


@dataclass(frozen=True)
class ReactionRecord:
    change_idx: int
    t_shaping_change_ms: float
    t_sender_decision_ms: Optional[float]
    reaction_ms: Optional[float]
    t_receiver_update_ms: Optional[float]
    update_ms: Optional[float]
    level_from: Optional[Level]
    level_to: Optional[Level]
    censored: bool = False
    t_aware_ms: Optional[float] = None
    actor: str = ""
    scenario: str = ""
    topology: str = ""
    estimator: str = ""
    report_period_ms: int = 0


@dataclass(frozen=True)
class Summary:
    mean_reaction_s: Optional[float]
    stddev_reaction_s: Optional[float]
    mean_update_s: Optional[float]
    stddev_update_s: Optional[float]
    n_changes: int

    @property
    def has_reactions(self) -> bool:
        return self.n_changes > 0

    def __str__(self) -> str:
        if not self.has_reactions:
            return "no reactions"
        update = "n/a" if self.mean_update_s is None else f"{self.mean_update_s:.3f}"
        return (
            f"reaction {self.mean_reaction_s:.3f} s (sd {self.stddev_reaction_s:.3f}), "
            f"update {update} s, n={self.n_changes}"
        )


NO_REACTIONS = Summary(None, None, None, None, 0)


def detect_reactions(trace: EventTrace) -> List[ReactionRecord]:
    """One record per shaping change that implied a level change.

    The reaction is the first controller decision after the change and
    before the next one. A change whose consumed reports asked for another
    level but drew no decision before being superseded is censored.
    """
    meta = trace.meta
    context = dict(
        scenario=str(meta.get("scenario", "")),
        topology=str(meta.get("topology", "")),
        estimator=str(meta.get("estimator", "")),
        report_period_ms=int(meta.get("report_period_ms", 0)),
    )
    changes: List[TraceRecord] = []
    consumes: List[TraceRecord] = []
    decisions: List[TraceRecord] = []
    arrivals: List[TraceRecord] = []
    seen_input = set()
    end_ms = trace.records[-1].time_ms if trace.records else 0.0
    for rec in trace.records:
        kind = rec.kind
        if kind == "ShapingChange":
            changes.append(rec)
        elif kind == "Consume":
            consumes.append(rec)
            seen_input.add(rec["actor"])
        elif kind == "Decision":
            if rec["actor"] not in seen_input:
                raise TraceError(f"decision by {rec['actor']} at {rec.time_ms} ms without a prior report")
            decisions.append(rec)
        elif kind == "FrameArrival" and rec["node"] == "receiver":
            arrivals.append(rec)
        elif kind == "SimEnd":
            end_ms = rec.time_ms

    records = []
    for idx, change in enumerate(changes):
        t0 = change.time_ms
        t1 = changes[idx + 1].time_ms if idx + 1 < len(changes) else end_ms
        decision = next((d for d in decisions if t0 <= d.time_ms < t1), None)
        if decision is None:
            wanted = any(t0 <= c.time_ms < t1 and c["level"] != c["current"] for c in consumes)
            if wanted:
                records.append(
                    ReactionRecord(idx, t0, None, None, None, None, None, None, censored=True, **context)
                )
            continue
        actor = decision["actor"]
        aware = next((c.time_ms for c in consumes if c.time_ms >= t0 and c["actor"] == actor), None)
        target = decision["level_to"]
        update = next(
            (
                a
                for a in arrivals
                if a.time_ms >= decision.time_ms
                and a["headers"]
                and a["level"] == target
                and a["encoded_at"] >= decision.time_ms
            ),
            None,
        )
        records.append(
            ReactionRecord(
                change_idx=idx,
                t_shaping_change_ms=t0,
                t_sender_decision_ms=decision.time_ms,
                reaction_ms=decision.time_ms - t0,
                t_receiver_update_ms=None if update is None else update.time_ms,
                update_ms=None if update is None else update.time_ms - decision.time_ms,
                level_from=decision["level_from"],
                level_to=target,
                t_aware_ms=aware,
                actor=actor,
                **context,
            )
        )
    return records


def summarize(records: Iterable[ReactionRecord]) -> Summary:
    """Population mean/stddev in seconds over uncensored records."""
    live = [r for r in records if not r.censored and r.reaction_ms is not None]
    if not live:
        return NO_REACTIONS
    reactions = [r.reaction_ms / 1000.0 for r in live]
    updates = [r.update_ms / 1000.0 for r in live if r.update_ms is not None]
    return Summary(
        mean_reaction_s=round(statistics.fmean(reactions), 3),
        stddev_reaction_s=round(statistics.pstdev(reactions), 3),
        mean_update_s=round(statistics.fmean(updates), 3) if updates else None,
        stddev_update_s=round(statistics.pstdev(updates), 3) if updates else None,
        n_changes=len(live),
    )


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return f"{value:.3f}"
    if isinstance(value, Level):
        return value.label
    return str(value)


def write_csv(records: Sequence[ReactionRecord], path) -> None:
    path = Path(path)
    rows = sorted(records, key=lambda r: r.change_idx)
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for r in rows:
                writer.writerow(
                    _cell(v)
                    for v in (
                        r.scenario,
                        r.topology,
                        r.estimator,
                        r.report_period_ms,
                        r.change_idx,
                        r.t_shaping_change_ms,
                        r.t_sender_decision_ms,
                        r.reaction_ms,
                        r.t_receiver_update_ms,
                        r.update_ms,
                        r.level_from,
                        r.level_to,
                        r.censored,
                    )
                )
    except OSError as exc:
        raise OSError(f"cannot write reactions CSV to {path}: {exc}") from exc


def format_table(rows: Dict[str, Summary], title: str = "Setup") -> str:
    """Aligned text table shaped like the reaction-time tables."""
    header = (title, "Avg sender reaction (s)", "Std sender reaction (s)", "Avg receiver update (s)", "n")
    body = []
    for name, s in rows.items():
        if not s.has_reactions:
            body.append((name, "no reactions", "", "", "0"))
            continue
        body.append(
            (
                name,
                f"{s.mean_reaction_s:.3f}",
                f"{s.stddev_reaction_s:.3f}",
                "n/a" if s.mean_update_s is None else f"{s.mean_update_s:.3f}",
                str(s.n_changes),
            )
        )
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in body)
    return "\n".join(lines) + "\n"
