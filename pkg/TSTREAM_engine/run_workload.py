#!/usr/bin/env python3
#
# run_workload.py
# TStream-Engine-py
#
# Replays an event trace through the engine and writes the metrics report and final state dump.
#
# Thales Matheus Mendonça Santos - November 2025

"""
Replay a trace through the engine.

Writes ``report.json``, ``report.csv`` and ``dump.bin`` into the output
directory and prints the report in the requested format. The dump uses the
checkpoint encoding, so two dumps can be compared byte for byte.
"""

import argparse
import dataclasses
import json
from pathlib import Path
from typing import List, Optional, Tuple

from .core.config import EngineConfig, configure_logging, load_config
from .core.durability import CrashInjector
from .core.engine import Engine
from .core.errors import SimulatedCrash, TStreamError, ValidationError
from .core.factories import Scenario, scenario_model, scenario_pipeline
from .core.learner import ModelSpec
from .core.metrics import REPORT_FORMATS, MetricsReport
from .core.stream_ingest import PipelineSpec, StreamEvent
from .core.traces import read_trace
from .generate_workload import read_sidecar

CRASH_EXIT_CODE = 3


def add_engine_arguments(parser: argparse.ArgumentParser) -> None:
    """Engine flags shared by run, oracle, recover-test, and serve."""
    parser.add_argument("--config", help="Engine configuration JSON file")
    parser.add_argument("--scenario", choices=[s.value for s in Scenario],
                        help="Use this scenario's pipeline and model instead of the trace sidecar's")
    parser.add_argument("--pipeline", help="Pipeline spec JSON file")
    parser.add_argument("--executors", type=int, help="Executor lanes E")
    parser.add_argument("--partitions", type=int, help="Key partitions P")
    parser.add_argument("--batch-size", type=int, help="Transactions per epoch B")
    parser.add_argument("--batch-timeout-ms", type=float, help="Live-mode batch timeout T")
    parser.add_argument("--checkpoint-every", type=int, help="Checkpoint every C epochs")
    parser.add_argument("--fsync-every", type=int, help="Group commit: fsync every G epochs")
    parser.add_argument("--state-dir", help="Durability directory (WAL and checkpoints)")
    parser.add_argument("--learners", type=int, help="Concurrent learners")
    parser.add_argument("--ingest-workers", type=int, help="Ingest worker lanes (0 = inline)")


def build_config(args: argparse.Namespace, sidecar: Optional[dict] = None) -> EngineConfig:
    """Config file, then the pipeline and model (--pipeline, --scenario, trace sidecar), then flags."""
    config = load_config(getattr(args, "config", None))
    explicit_pipeline = False
    if getattr(args, "pipeline", None):
        pipeline = PipelineSpec.from_dict(json.loads(Path(args.pipeline).read_text(encoding="utf-8")))
        config = dataclasses.replace(config, pipeline=pipeline)
        explicit_pipeline = True
    elif getattr(args, "scenario", None):
        config = dataclasses.replace(
            config,
            pipeline=scenario_pipeline(args.scenario),
            learner=dataclasses.replace(config.learner, model=scenario_model(args.scenario)),
        )
        explicit_pipeline = True
    elif sidecar is not None:
        config = dataclasses.replace(
            config,
            pipeline=PipelineSpec.from_dict(sidecar["pipeline"]),
            learner=dataclasses.replace(config.learner, model=ModelSpec.from_dict(sidecar["model"])),
        )

    if explicit_pipeline and sidecar is not None:
        expected = sidecar["pipeline"].get("sink")
        if expected != config.pipeline.sink.value:
            raise ValidationError(
                f"Trace was generated for the {expected!r} sink but the pipeline uses {config.pipeline.sink.value!r}")

    return config.with_overrides(
        txn__executors=getattr(args, "executors", None),
        txn__batch_size=getattr(args, "batch_size", None),
        txn__batch_timeout_ms=getattr(args, "batch_timeout_ms", None),
        store__partitions=getattr(args, "partitions", None),
        durability__checkpoint_every=getattr(args, "checkpoint_every", None),
        durability__fsync_every=getattr(args, "fsync_every", None),
        durability__directory=getattr(args, "state_dir", None),
        learner__learners=getattr(args, "learners", None),
        ingest__workers=getattr(args, "ingest_workers", None),
    )


def load_workload(trace) -> Tuple[List[StreamEvent], Optional[dict]]:
    return read_trace(trace), read_sidecar(Path(trace))


def run_trace(events: List[StreamEvent], config: EngineConfig, out_dir, *, crash_at: Optional[int] = None,
              resume: bool = False) -> Tuple[MetricsReport, Path]:
    """Replay ``events``; writes report.json, report.csv and dump.bin under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    crash = CrashInjector(at_byte=crash_at) if crash_at is not None else None
    with Engine(config, crash=crash) as engine:
        cursor = engine.recovery.cursor if resume and engine.recovery is not None else 0
        report = engine.replay(events, resume_from=cursor)
        dump_path = out_dir / "dump.bin"
        dump_path.write_bytes(engine.dump_bytes())
    report.write(out_dir / "report.json", "json")
    report.write(out_dir / "report.csv", "csv")
    return report, dump_path


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--trace", required=True, help="Event trace to replay")
    parser.add_argument("--out", default="output/run", help="Output directory (default: output/run)")
    parser.add_argument("--report-format", default="text", choices=REPORT_FORMATS,
                        help="Format printed to stdout (default: text)")
    parser.add_argument("--crash-at", type=int, help="Inject a crash at this cumulative WAL byte offset")
    parser.add_argument("--resume", action="store_true",
                        help="Continue an interrupted replay from the state directory's recovered epoch")
    add_engine_arguments(parser)


def execute(args: argparse.Namespace) -> int:
    if args.crash_at is not None and not args.state_dir:
        raise SystemExit("--crash-at needs --state-dir")
    try:
        events, sidecar = load_workload(args.trace)
        config = build_config(args, sidecar)
        print(f"{'='*80}")
        print(f"Replaying {len(events)} events from {args.trace}")
        print(f"{'='*80}")
        print(f"Executors: {config.txn.executors}  Partitions: {config.store.partitions}  "
              f"Batch: {config.txn.batch_size}  Sink: {config.pipeline.sink.value}\n")
        report, dump_path = run_trace(events, config, args.out, crash_at=args.crash_at, resume=args.resume)
    except SimulatedCrash as exc:
        print(f"✗ {exc}")
        print(f"  Resume with: --state-dir {args.state_dir} --resume")
        return CRASH_EXIT_CODE
    except (TStreamError, OSError, json.JSONDecodeError) as exc:
        raise SystemExit(f"Run failed: {exc}") from exc

    print(report.render(args.report_format))
    marker = "✓" if report.reconciles() else "✗"
    print(f"{marker} Counts reconcile: {report.reconciles()}")
    print(f"  Report: {Path(args.out) / 'report.json'}")
    print(f"  Dump  : {dump_path}")
    return 0 if report.reconciles() else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Replay a trace through the TStream engine")
    add_arguments(parser)
    args = parser.parse_args(argv)
    configure_logging()
    return execute(args)


if __name__ == "__main__":
    raise SystemExit(main())
