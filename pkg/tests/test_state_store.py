#
# test_state_store.py
# TStream-Engine-py
#
# Checks partition hashing, snapshot visibility, version pruning, and dump ordering of the versioned store.
#
# Thales Matheus Mendonça Santos - November 2025

import threading

import numpy as np
import pytest

from TSTREAM_engine.core.codec import encode_listing
from TSTREAM_engine.core.config import StoreConfig
from TSTREAM_engine.core.errors import (
    DimensionMismatchError,
    HistoryUnavailableError,
    MonotonicityError,
    SnapshotError,
    ValidationError,
)
from TSTREAM_engine.core.keys import ShardKey, fnv1a64, partition_of
from TSTREAM_engine.core.state_store import VersionedStore


def _reference_fnv(data: bytes) -> int:
    value = 14695981039346656037
    for byte in data:
        value = ((value ^ byte) * 1099511628211) % 2**64
    return value


def _commit(store, epoch, values):
    for key, value in values.items():
        store.install_version(key, value, epoch)
    store.advance_watermark(epoch)


def _chain(store, key):
    return next(chain for chain in store.iter_chains() if chain.key == key)


def test_fnv1a64_known_vectors():
    # Published FNV-1a 64-bit test vectors
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C


def test_partition_of_single_partition_is_zero():
    # Everything lands on partition 0 when there is only one
    config = StoreConfig(partitions=1)
    for name in ("w0", "b", "training_history", "x" * 256):
        assert partition_of(ShardKey.params(name), config) == 0


def test_partition_of_matches_reference_hash():
    # Index is FNV-1a over namespace byte + name, xor seed, modulo partitions
    key = ShardKey.params("w0")
    assert partition_of(key, StoreConfig(partitions=4)) == _reference_fnv(b"\x00w0") % 4
    seeded = StoreConfig(partitions=7, hash_seed=12345)
    meta = ShardKey.meta("training_history")
    assert partition_of(meta, seeded) == (_reference_fnv(b"\x01training_history") ^ 12345) % 7
    assert partition_of(key, seeded) == partition_of(ShardKey.params(b"w0"), seeded)


def test_shard_key_validation_and_order():
    # Names are non-empty, bounded, and keys sort by (namespace, name)
    with pytest.raises(ValidationError):
        ShardKey.params("")
    with pytest.raises(ValidationError):
        ShardKey.params("n" * 257)
    keys = [ShardKey.meta("a"), ShardKey.params("b"), ShardKey.params("a")]
    assert sorted(keys) == [ShardKey.params("a"), ShardKey.params("b"), ShardKey.meta("a")]
    assert ShardKey.params("w:x1").label() == "params:w:x1"


def test_get_at_returns_newest_visible_version():
    # Versions at epochs 1 and 3; epoch 2 still sees the first one
    store = VersionedStore()
    key = ShardKey.params("k")
    _commit(store, 1, {key: [1.0]})
    _commit(store, 2, {})
    _commit(store, 3, {key: [3.0]})

    with store.snapshot_at(2) as snapshot:
        assert store.get_at(key, snapshot).tolist() == [1.0]
    with store.snapshot_at(3) as snapshot:
        assert store.get_at(key, snapshot).tolist() == [3.0]
    with store.snapshot_at(0) as snapshot:
        assert store.get_at(key, snapshot) is None


def test_install_version_enforces_monotonic_epochs(store):
    # A second version for the same epoch is refused
    key = ShardKey.params("k")
    store.install_version(key, [1.0], 1)
    with pytest.raises(MonotonicityError):
        store.install_version(key, [2.0], 1)
    store.advance_watermark(1)
    with pytest.raises(MonotonicityError):
        store.install_version(key, [2.0], 1)
    with pytest.raises(MonotonicityError):
        store.advance_watermark(3)


def test_install_version_rejects_dimension_change_and_non_finite(store):
    # Params keys keep their dim and never hold NaN/Inf
    key = ShardKey.params("k")
    _commit(store, 1, {key: [1.0]})
    with pytest.raises(DimensionMismatchError):
        store.install_version(key, [1.0, 2.0], 2)
    with pytest.raises(ValidationError):
        store.install_version(key, [float("nan")], 2)
    with pytest.raises(ValidationError):
        store.install_version(ShardKey.meta("m"), [1.0], 2)


def test_pruning_keeps_max_versions(store):
    # V=2: installing epoch 3 with no older snapshot drops epoch 1
    key = ShardKey.params("k")
    _commit(store, 1, {key: [1.0]})
    _commit(store, 2, {key: [2.0]})
    store.install_version(key, [3.0], 3)

    assert _chain(store, key).epochs == [2, 3]
    assert store.horizon() == 2
    store.advance_watermark(3)
    with pytest.raises(HistoryUnavailableError):
        store.snapshot_at(1)


def test_live_snapshot_pins_versions(store):
    # A snapshot at epoch 1 keeps its version alive until released
    key = ShardKey.params("k")
    _commit(store, 1, {key: [1.0]})
    pinned = store.create_snapshot()
    _commit(store, 2, {key: [2.0]})
    _commit(store, 3, {key: [3.0]})

    assert _chain(store, key).epochs == [1, 2, 3]
    assert pinned.get(key).tolist() == [1.0]

    pinned.release()
    _commit(store, 4, {key: [4.0]})
    assert _chain(store, key).epochs == [3, 4]


def test_snapshot_is_stable_across_commits():
    # A handle taken at watermark 5 keeps reading the epoch-5 view
    store = VersionedStore()
    key = ShardKey.params("k")
    for epoch in range(1, 5):
        _commit(store, epoch, {})
    _commit(store, 5, {key: [5.0]})

    handle = store.create_snapshot()
    assert handle.epoch_id == 5
    _commit(store, 6, {key: [6.0]})
    assert handle.get(key).tolist() == [5.0]
    with store.create_snapshot() as fresh:
        assert fresh.epoch_id == 6
        assert fresh.get(key).tolist() == [6.0]
    handle.release()


def test_snapshot_lifecycle_errors(store):
    # Reads after release and double releases are usage errors
    handle = store.create_snapshot()
    handle.release()
    assert handle.released
    with pytest.raises(SnapshotError):
        handle.get(ShardKey.params("k"))
    with pytest.raises(SnapshotError):
        store.release_snapshot(handle)

    with store.create_snapshot():
        assert store.live_snapshots() == 1
    assert store.live_snapshots() == 0

    other = VersionedStore()
    with other.create_snapshot() as foreign:
        with pytest.raises(SnapshotError):
            store.get_at(ShardKey.params("k"), foreign)


def test_snapshot_at_beyond_watermark(store):
    # Only committed epochs can be pinned
    with pytest.raises(HistoryUnavailableError):
        store.snapshot_at(1)


def test_dump_is_key_ordered_and_deterministic():
    # Params sort before Meta; repeated dumps are byte-identical
    store = VersionedStore(StoreConfig(partitions=3))
    assert store.dump(store.create_snapshot()) == []

    _commit(store, 1, {
        ShardKey.meta("training_history"): b"\x01\x02",
        ShardKey.params("w:b"): [2.0],
        ShardKey.params("w:a"): [1.0],
    })
    with store.create_snapshot() as snapshot:
        first = store.dump(snapshot)
        second = store.dump(snapshot)
    assert [key for key, _ in first] == [
        ShardKey.params("w:a"), ShardKey.params("w:b"), ShardKey.meta("training_history")]
    assert encode_listing(first) == encode_listing(second)


def test_restore_loads_listing_at_epoch():
    # A restored store starts at the listing's epoch with history from there on
    listing = [(ShardKey.params("k"), np.array([4.0])), (ShardKey.meta("m"), b"x")]
    store = VersionedStore()
    store.restore(listing, 7)

    assert store.watermark == 7
    assert store.horizon() == 7
    with store.create_snapshot() as snapshot:
        assert store.get_at(ShardKey.params("k"), snapshot).tolist() == [4.0]
    with pytest.raises(ValidationError):
        store.restore(listing, 8)


def test_concurrent_readers_see_consistent_values():
    # Readers pinned while a writer commits always see their own epoch
    store = VersionedStore(StoreConfig(partitions=4, max_versions=2))
    keys = [ShardKey.params(f"k{i}") for i in range(8)]
    _commit(store, 1, {key: [1.0] for key in keys})
    violations = []
    stop = threading.Event()

    def reader():
        while not stop.is_set():
            with store.create_snapshot() as snapshot:
                values = {store.get_at(key, snapshot)[0] for key in keys}
                if values != {float(snapshot.epoch_id)}:
                    violations.append((snapshot.epoch_id, values))

    threads = [threading.Thread(target=reader) for _ in range(4)]
    for thread in threads:
        thread.start()
    for epoch in range(2, 200):
        _commit(store, epoch, {key: [float(epoch)] for key in keys})
    stop.set()
    for thread in threads:
        thread.join()

    assert violations == []
