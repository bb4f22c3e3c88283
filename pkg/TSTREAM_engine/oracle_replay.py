#!/usr/bin/env python3
#
# oracle_replay.py
# TStream-Engine-py
#
# Replays a trace on the serial reference executor and compares its dump with an engine dump.
#
# Thales Matheus Mendonça Santos - November 2025

"""
Serial reference replay.

Runs the trace through the same pipeline and learner on
:class:`~TSTREAM_engine.core.oracle.SerialOracle`, one transaction at a time
in admission order, and writes ``oracle_dump.bin``. With ``--compare`` the
result is checked byte for byte against an engine dump.
"""

import argparse
import json
from pathlib import Path
from typing import Optional

from .core.codec import decode_listing
from .core.config import EngineConfig, configure_logging
from .core.engine import serial_replay
from .core.errors import TStreamError
from .run_workload import add_engine_arguments, build_config, load_workload


def oracle_dump(events, config: EngineConfig, *, max_items: Optional[int] = None) -> bytes:
    oracle, _ = serial_replay(events, config, max_items=max_items)
    return oracle.dump_bytes()


def first_difference(left: bytes, right: bytes) -> Optional[str]:
    """Label of the first key whose value differs between two dumps, or None if they match."""
    if left == right:
        return None
    _, left_listing = decode_listing(left)
    _, right_listing = decode_listing(right)
    left_map = dict(left_listing)
    right_map = dict(right_listing)
    for key in sorted(set(left_map) | set(right_map)):
        a, b = left_map.get(key), right_map.get(key)
        if a is None or b is None or bytes(memoryview(a)) != bytes(memoryview(b)):
            return key.label()
    return "dump header"


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--trace", required=True, help="Event trace to replay")
    parser.add_argument("--out", default="output/oracle", help="Output directory (default: output/oracle)")
    parser.add_argument("--compare", help="Engine dump.bin to compare against")
    add_engine_arguments(parser)


def execute(args: argparse.Namespace) -> int:
    try:
        events, sidecar = load_workload(args.trace)
        config = build_config(args, sidecar)
        dump = oracle_dump(events, config)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        dump_path = out_dir / "oracle_dump.bin"
        dump_path.write_bytes(dump)
        engine_dump = Path(args.compare).read_bytes() if args.compare else None
        difference = first_difference(dump, engine_dump) if engine_dump is not None else None
    except (TStreamError, OSError, json.JSONDecodeError) as exc:
        raise SystemExit(f"Oracle replay failed: {exc}") from exc

    print(f"{'='*80}")
    print(f"Serial oracle: {len(events)} events")
    print(f"{'='*80}")
    print(f"Dump written to {dump_path}")
    if engine_dump is None:
        return 0
    if difference is None:
        print(f"✓ Identical to {args.compare}")
        return 0
    print(f"✗ Differs from {args.compare} (first mismatch at {difference})")
    return 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Replay a trace on the serial reference executor")
    add_arguments(parser)
    args = parser.parse_args(argv)
    configure_logging()
    return execute(args)


if __name__ == "__main__":
    raise SystemExit(main())
