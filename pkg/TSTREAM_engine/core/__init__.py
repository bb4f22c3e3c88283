#
# __init__.py
# TStream-Engine-py
#
# Centralizes imports for the engine components shared by the CLI tools and the web layer.
#
# Thales Matheus Mendonça Santos - November 2025

"""Shared engine components.

This module centralizes the reusable pieces so the CLI tools, the harness,
and the web layer all rely on the same implementations.
"""

from .config import EngineConfig, configure_logging, load_config
from .durability import CrashInjector, DurabilityManager, RecoveryReport, recover
from .engine import Engine, WorkDispatcher, serial_replay
from .errors import TStreamError, ValidationError
from .factories import Scenario, WorkloadSpec, ZipfSampler, generate_events, scenario_model, scenario_pipeline
from .keys import Namespace, ShardKey
from .metrics import MetricsReport
from .oracle import SerialOracle
from .state_store import VersionedStore
from .stream_ingest import PipelineSpec, StreamEvent
from .traces import read_trace, write_trace
from .transactions import StateOp, Transaction
from .txn_manager import TransactionManager

# Re-export common helpers so callers can import from a single namespace
__all__ = [
    "EngineConfig",
    "configure_logging",
    "load_config",
    "CrashInjector",
    "DurabilityManager",
    "RecoveryReport",
    "recover",
    "Engine",
    "WorkDispatcher",
    "serial_replay",
    "TStreamError",
    "ValidationError",
    "Scenario",
    "WorkloadSpec",
    "ZipfSampler",
    "generate_events",
    "scenario_model",
    "scenario_pipeline",
    "Namespace",
    "ShardKey",
    "MetricsReport",
    "SerialOracle",
    "VersionedStore",
    "PipelineSpec",
    "StreamEvent",
    "read_trace",
    "write_trace",
    "StateOp",
    "Transaction",
    "TransactionManager",
]
