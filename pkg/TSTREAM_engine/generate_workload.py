#!/usr/bin/env python3
#
# generate_workload.py
# TStream-Engine-py
#
# Generates seeded synthetic event traces for the Synthetic, Healthcare, Traffic, and Sentiment scenarios.
#
# Thales Matheus Mendonça Santos - November 2025

"""
Generate a replayable event trace.

The trace goes to the requested path; a JSON sidecar next to it
(``<trace>.json``) records the workload spec together with the pipeline and
model the scenario is meant to run with, so ``run`` and ``oracle`` pick
them up without extra flags.
"""

import argparse
import json
from pathlib import Path
from typing import Optional, Tuple

from .core.config import configure_logging
from .core.errors import TStreamError
from .core.factories import ArrivalModel, Scenario, WorkloadSpec, generate_events, scenario_model, scenario_pipeline
from .core.traces import write_trace


def sidecar_path(trace: Path) -> Path:
    return trace.with_name(trace.name + ".json")


def read_sidecar(trace: Path) -> Optional[dict]:
    path = sidecar_path(Path(trace))
    if not path.exists():
        return None
    return json.loads(path.read_text(encoding="utf-8"))


def generate_trace(spec: WorkloadSpec, output) -> Tuple[Path, int]:
    """Write the trace for ``spec`` plus its sidecar; returns ``(path, event_count)``."""
    output = Path(output)
    count = write_trace(output, generate_events(spec))
    sidecar = {
        "workload": spec.to_dict(),
        "pipeline": scenario_pipeline(spec.scenario).to_dict(),
        "model": scenario_model(spec.scenario).to_dict(),
        "events": count,
    }
    sidecar_path(output).write_text(json.dumps(sidecar, indent=2), encoding="utf-8")
    return output, count


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", default="output/trace.tsv", help="Trace path (default: output/trace.tsv)")
    parser.add_argument("--scenario", default="synthetic", choices=[s.value for s in Scenario],
                        help="Workload scenario (default: synthetic)")
    parser.add_argument("--events", type=int, help="Total number of events")
    parser.add_argument("--keys", type=int, help="Key space size K")
    parser.add_argument("--zipf", type=float, help="Zipf skew (0 = uniform)")
    parser.add_argument("--mix", type=float, help="Fraction of events that are observations")
    parser.add_argument("--seed", type=int, help="RNG seed")
    parser.add_argument("--sources", type=int, help="Number of event sources")
    parser.add_argument("--rate", type=float,
                        help="Fixed arrival rate in events/s (default: closed loop, one tick per event)")


def execute(args: argparse.Namespace) -> int:
    try:
        spec = WorkloadSpec.for_scenario(
            args.scenario,
            events=args.events,
            keys=args.keys,
            zipf=args.zipf,
            mix=args.mix,
            seed=args.seed,
            sources=args.sources,
            arrival=ArrivalModel.FIXED_RATE if args.rate else None,
            rate=args.rate,
        )
        path, count = generate_trace(spec, args.out)
    except (TStreamError, OSError) as exc:
        raise SystemExit(f"Failed to generate workload: {exc}") from exc

    print(f"{'='*80}")
    print("Workload Generated")
    print(f"{'='*80}")
    print(f"Scenario : {spec.scenario.value}")
    print(f"Events   : {count}")
    print(f"Keys     : {spec.keys} (zipf={spec.zipf})")
    print(f"Mix      : {spec.mix}")
    print(f"Seed     : {spec.seed}")
    print(f"\n✓ Trace written to {path}")
    print(f"  Sidecar: {sidecar_path(path)}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Generate a replayable TStream event trace")
    add_arguments(parser)
    args = parser.parse_args(argv)
    configure_logging()
    return execute(args)


if __name__ == "__main__":
    raise SystemExit(main())
