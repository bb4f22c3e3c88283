#
# conftest.py
# TStream-Engine-py
#
# Provides pytest fixtures that build small stores, managers, engines, and seeded workloads for test cases.
#
# Thales Matheus Mendonça Santos - November 2025

import pytest

from TSTREAM_engine.core import EngineConfig, Engine, VersionedStore, TransactionManager
from TSTREAM_engine.core.config import StoreConfig, TxnConfig
from TSTREAM_engine.core.factories import Scenario, WorkloadSpec, generate_events
from TSTREAM_engine.core.traces import write_trace
from TSTREAM_engine.generate_workload import generate_trace


@pytest.fixture(scope="function")
def store():
    # Two partitions and short chains so pruning shows up in small tests
    return VersionedStore(StoreConfig(partitions=2, max_versions=2))


@pytest.fixture(scope="function")
def manager():
    # Replay-mode manager: commits inline every 4 updates, two executor lanes
    txn_manager = TransactionManager(VersionedStore(StoreConfig(partitions=4)),
                                     TxnConfig(executors=2, batch_size=4, queue_capacity=64))
    yield txn_manager
    txn_manager.close()


@pytest.fixture(scope="function")
def small_config():
    return EngineConfig().with_overrides(txn__batch_size=16, txn__executors=2, store__partitions=4)


@pytest.fixture(scope="function")
def engine(small_config):
    with Engine(small_config) as running:
        yield running


@pytest.fixture(scope="function")
def synthetic_events():
    # Small deterministic counter-sink workload
    return generate_events(WorkloadSpec(events=400, keys=16, seed=11, scenario=Scenario.SYNTHETIC))


@pytest.fixture(scope="function")
def synthetic_trace(tmp_path):
    path, _ = generate_trace(WorkloadSpec(events=300, keys=16, seed=5), tmp_path / "trace.tsv")
    return path


@pytest.fixture(scope="function")
def healthcare_trace(tmp_path):
    path, _ = generate_trace(WorkloadSpec.for_scenario(Scenario.HEALTHCARE, events=300, seed=3),
                             tmp_path / "healthcare.tsv")
    return path


@pytest.fixture(scope="function")
def bare_trace(tmp_path, synthetic_events):
    # Trace without a sidecar; engine defaults apply
    path = tmp_path / "bare.tsv"
    write_trace(path, synthetic_events)
    return path
