#
# cli.py
# TStream-Engine-py
#
# Supplies the unified command-line entry point that wires the engine tools to subcommands.
#
# Thales Matheus Mendonça Santos - November 2025

"""Unified CLI front-end for the TStream engine."""

import argparse

from . import generate_workload, oracle_replay, recover_test, run_workload, web_interface
from .core.config import configure_logging


def cmd_generate(args: argparse.Namespace) -> int:
    return generate_workload.execute(args)


def cmd_run(args: argparse.Namespace) -> int:
    return run_workload.execute(args)


def cmd_oracle(args: argparse.Namespace) -> int:
    return oracle_replay.execute(args)


def cmd_recover_test(args: argparse.Namespace) -> int:
    return recover_test.execute(args)


def cmd_serve(args: argparse.Namespace) -> int:
    return web_interface.execute(args)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tstream", description="Transactional stream engine for online learning")
    sub = parser.add_subparsers(dest="command", required=True)

    generate = sub.add_parser("generate", help="Generate a seeded event trace")
    generate_workload.add_arguments(generate)
    generate.set_defaults(func=cmd_generate)

    run = sub.add_parser("run", help="Replay a trace through the engine")
    run_workload.add_arguments(run)
    run.set_defaults(func=cmd_run)

    oracle = sub.add_parser("oracle", help="Replay a trace on the serial reference executor")
    oracle_replay.add_arguments(oracle)
    oracle.set_defaults(func=cmd_oracle)

    recover = sub.add_parser("recover-test", help="Crash, recover, and resume a replay")
    recover_test.add_arguments(recover)
    recover.set_defaults(func=cmd_recover_test)

    serve = sub.add_parser("serve", help="Launch the inference API")
    web_interface.add_arguments(serve)
    serve.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging()
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
