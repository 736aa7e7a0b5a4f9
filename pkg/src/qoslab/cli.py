"""Command-line experiment runner.

``qoslab run`` resolves a scenario (preset name or TOML file), applies flag
overrides, executes one or more runs and writes per-run artifacts:

    <out>/<run-id>/trace.tsv      event trace
    <out>/<run-id>/reactions.csv  one row per reaction record
    <out>/<run-id>/summary.txt    aggregate reaction/update statistics
    <out>/<run-id>/config.toml    fully resolved config (re-runnable)

Matrix presets additionally print a comparison table and write it to
``<out>/comparison.txt``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from .config import ConfigError, ScenarioConfig, load_file, merge, resolve, DEFAULTS
from .metrics import ReactionRecord, Summary, detect_reactions, format_table, summarize, write_csv
from .simcore import run

log = logging.getLogger("qoslab")

DEFAULT_OUT_DIR = "qoslab-out"
OUT_ENV = "QOSLAB_OUT"

EXIT_OK = 0
EXIT_RUN_FAILURE = 1
EXIT_CONFIG_ERROR = 2


@dataclass(frozen=True)
class RunSpec:
    run_id: str
    row: str
    config: ScenarioConfig


@dataclass
class RunResult:
    run_id: str
    row: str
    records: List[ReactionRecord]
    error: Optional[str] = None


# Each preset is a title for the comparison table plus (run-id, row, overrides) entries.
PRESETS: Dict[str, Tuple[str, List[Tuple[str, str, Dict[str, Any]]]]] = {
    "paper-bandwidth": ("Setup", [("bandwidth", "bandwidth", {"shaping": {"kind": "bandwidth"}})]),
    "paper-latency": ("Setup", [("latency", "latency", {"shaping": {"kind": "latency"}})]),
    "paper-table6": (
        "Topology",
        [
            (f"{topo}-{kind}", label, {"scenario": {"topology": topo}, "shaping": {"kind": kind, "path": "downlink"}})
            for topo, label in (("direct", "Direct"), ("transcoding", "TranscodingRelay"), ("reporting", "ReportingRelay"))
            for kind in ("bandwidth", "latency")
        ],
    ),
    "paper-table4": (
        "Report period (ms)",
        [
            (f"period{period}-{kind}", str(period),
             {"scenario": {"topology": "direct", "report_period_ms": period}, "shaping": {"kind": kind}})
            for period in (500, 1000)
            for kind in ("bandwidth", "latency")
        ],
    ),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qoslab", description="QoS adaptation experiment runner")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario or preset matrix")
    r.add_argument("--scenario", default="paper-bandwidth",
                   help=f"preset ({', '.join(PRESETS)}) or path to a TOML file")
    r.add_argument("--topology", choices=["direct", "transcoding", "reporting"])
    r.add_argument("--shaping", choices=["bandwidth", "latency"])
    r.add_argument("--shaped-path", choices=["uplink", "downlink", "both"])
    r.add_argument("--estimator", choices=["oracle", "delay-gradient"])
    r.add_argument("--report-period-ms", type=int)
    r.add_argument("--duration-s", type=float)
    r.add_argument("--seed", type=int)
    r.add_argument("--no-transcoding", action="store_true",
                   help="relay forwards media untouched (upload-only adaptation)")
    r.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT_DIR})")
    r.add_argument("--jobs", type=int, default=1, help="parallel runs for matrix presets")

    d = sub.add_parser("defaults", help="print the default config as TOML")
    d.set_defaults(jobs=1)
    return parser


def flag_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    pairs = {
        "scenario": {
            "topology": args.topology,
            "report_period_ms": args.report_period_ms,
            "duration_s": args.duration_s,
            "seed": args.seed,
            "transcoding": False if args.no_transcoding else None,
        },
        "shaping": {"kind": args.shaping, "path": args.shaped_path},
        "estimator": {"strategy": args.estimator},
    }
    out: Dict[str, Any] = {}
    for section, values in pairs.items():
        kept = {k: v for k, v in values.items() if v is not None}
        if kept:
            out[section] = kept
    return out


def parse_config(args: argparse.Namespace) -> Tuple[str, List[RunSpec], Path]:
    """Resolve the scenario into run specs; precedence is flags > file > defaults.

    For matrix presets the preset's own axes (topology, period, shaping kind)
    are applied after the flags, since they define the experiment.
    """
    flags = flag_overrides(args)
    scenario = args.scenario
    title = "Setup"
    if scenario in PRESETS:
        title, entries = PRESETS[scenario]
        file_values: Dict[str, Any] = {}
        source = f"preset {scenario}"
    else:
        path = Path(scenario)
        if not path.suffix and not path.exists():
            raise ConfigError(f"unknown scenario '{scenario}'; expected one of {', '.join(PRESETS)} or a TOML file")
        file_values = load_file(path)
        source = str(path)
        entries = [(path.stem, path.stem, {})]

    base_tree = DEFAULTS
    if file_values:
        base_tree = merge(base_tree, file_values, source)
    base_tree = merge(base_tree, flags, "command-line flags")
    name = base_tree["scenario"]["name"]
    if name == DEFAULTS["scenario"]["name"]:
        name = scenario if scenario in PRESETS else Path(scenario).stem

    specs = []
    for run_id, row, axes in entries:
        tree = merge(base_tree, axes, source) if axes else base_tree
        tree = merge(tree, {"scenario": {"name": name}}, source)
        cfg = resolve(tree, None, source)
        if len(entries) == 1:
            row = cfg.topology.label
        specs.append(RunSpec(run_id, row, cfg))

    out = args.out or base_tree["output"]["dir"] or os.environ.get(OUT_ENV) or DEFAULT_OUT_DIR
    return title, specs, Path(out)


def execute(spec: RunSpec, out_dir: Path) -> RunResult:
    """One run end to end; failures come back as a message, never raise."""
    try:
        run_dir = out_dir / spec.run_id
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.toml").write_text(spec.config.to_toml(), encoding="utf-8")
        trace = run(spec.config)
        trace.write(run_dir / "trace.tsv")
        records = detect_reactions(trace)
        write_csv(records, run_dir / "reactions.csv")
        summary = summarize(records)
        (run_dir / "summary.txt").write_text(format_table({spec.row: summary}), encoding="utf-8")
        return RunResult(spec.run_id, spec.row, records)
    except Exception as exc:  # noqa: BLE001 - isolate one run from the rest
        return RunResult(spec.run_id, spec.row, [], error=f"{type(exc).__name__}: {exc}")


def run_matrix(specs: Sequence[RunSpec], out_dir: Path, jobs: int = 1,
               title: str = "Setup", stream=None) -> int:
    stream = stream or sys.stdout
    if not specs:
        raise ValueError("run_matrix needs at least one run")
    if jobs > 1 and len(specs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(execute, specs, [out_dir] * len(specs)))
    else:
        results = [execute(s, out_dir) for s in specs]

    rows: Dict[str, List[ReactionRecord]] = {}
    failed = 0
    for res in results:
        if res.error:
            failed += 1
            print(f"run {res.run_id} failed: {res.error}", file=sys.stderr)
            continue
        log.info("run %s: %d reaction records", res.run_id, len(res.records))
        rows.setdefault(res.row, []).extend(res.records)
    summaries: Dict[str, Summary] = {row: summarize(recs) for row, recs in rows.items()}
    table = format_table(summaries, title)
    stream.write(table)
    if len(specs) > 1:
        (out_dir / "comparison.txt").write_text(table, encoding="utf-8")
    return EXIT_RUN_FAILURE if failed else EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "defaults":
        sys.stdout.write(resolve().to_toml())
        return EXIT_OK
    try:
        title, specs, out_dir = parse_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"cannot create output directory {out_dir}: {exc}", file=sys.stderr)
        return EXIT_RUN_FAILURE
    return run_matrix(specs, out_dir, max(1, args.jobs), title)


if __name__ == "__main__":
    sys.exit(main())
