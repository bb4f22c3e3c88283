#
# state_store.py
# TStream-Engine-py
#
# Stores model parameters and metadata as hash-partitioned, bounded multi-version chains with snapshot reads.
#
# Thales Matheus Mendonça Santos - November 2025

"""Partitioned multi-version state store.

Every key owns a chain of ``(epoch_id, value)`` versions. Readers pin a
committed epoch through a :class:`SnapshotHandle` and always see the newest
version at or below it. The commit coordinator installs the versions of an
epoch and only then advances the watermark, so no reader ever observes half
an epoch.
"""

import bisect
import itertools
import logging
import threading
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from .config import StoreConfig
from .errors import (
    DimensionMismatchError,
    HistoryUnavailableError,
    MonotonicityError,
    SnapshotError,
    StaleSnapshotError,
    ValidationError,
)
from .keys import ShardKey, partition_of
from .transactions import ShardValue, coerce_value

logger = logging.getLogger(__name__)

Listing = List[Tuple[ShardKey, ShardValue]]


class VersionChain:
    """Versions of one key, ascending by epoch."""

    __slots__ = ("key", "epochs", "values", "first_epoch")

    def __init__(self, key: ShardKey):
        self.key = key
        self.epochs: List[int] = []
        self.values: List[ShardValue] = []
        # Epoch of the first version ever installed; survives pruning
        self.first_epoch: Optional[int] = None

    def __len__(self) -> int:
        return len(self.epochs)

    @property
    def newest_epoch(self) -> Optional[int]:
        return self.epochs[-1] if self.epochs else None

    @property
    def newest(self) -> Optional[ShardValue]:
        return self.values[-1] if self.values else None

    def visible(self, epoch_id: int) -> Optional[ShardValue]:
        if self.first_epoch is None or epoch_id < self.first_epoch:
            return None
        index = bisect.bisect_right(self.epochs, epoch_id) - 1
        if index < 0:
            raise StaleSnapshotError(
                f"Version of {self.key} visible at epoch {epoch_id} was pruned "
                f"(oldest retained epoch {self.epochs[0]})")
        return self.values[index]

    def append(self, epoch_id: int, value: ShardValue) -> None:
        self.epochs.append(epoch_id)
        self.values.append(value)
        if self.first_epoch is None:
            self.first_epoch = epoch_id

    def prune(self, max_versions: int, floor: int) -> int:
        """Drop oldest versions beyond ``max_versions`` that no reader at or above ``floor`` can see."""
        removed = 0
        # Version 0 is invisible to every epoch >= floor once version 1 is at or below floor
        while len(self.epochs) > max_versions and self.epochs[1] <= floor:
            del self.epochs[0]
            del self.values[0]
            removed += 1
        return removed


class SnapshotHandle:
    """Pinned, read-only view of the store at one committed epoch."""

    __slots__ = ("epoch_id", "_store", "_serial", "_released")

    def __init__(self, store: "VersionedStore", epoch_id: int, serial: int):
        self.epoch_id = epoch_id
        self._store = store
        self._serial = serial
        self._released = False

    @property
    def released(self) -> bool:
        return self._released

    def get(self, key: ShardKey) -> Optional[ShardValue]:
        return self._store.get_at(key, self)

    def release(self) -> None:
        self._store.release_snapshot(self)

    def __enter__(self) -> "SnapshotHandle":
        return self

    def __exit__(self, exc_type, exc, tb):
        if not self._released:
            self.release()

    def __repr__(self) -> str:
        state = "released" if self._released else "live"
        return f"SnapshotHandle(epoch_id={self.epoch_id}, {state})"


class VersionedStore:
    """Hash-partitioned map from ShardKey to a bounded VersionChain."""

    def __init__(self, config: Optional[StoreConfig] = None):
        self._config = config or StoreConfig()
        self._partitions: List[Dict[ShardKey, VersionChain]] = [{} for _ in range(self._config.partitions)]
        self._partition_locks = [threading.Lock() for _ in range(self._config.partitions)]
        # Guards watermark, snapshot registry, and history horizon
        self._registry_lock = threading.Lock()
        self._watermark = 0
        self._horizon = 0
        self._live: Dict[int, int] = {}
        self._pins: Dict[int, int] = {}
        self._serials = itertools.count(1)

    @property
    def config(self) -> StoreConfig:
        return self._config

    @property
    def watermark(self) -> int:
        return self._watermark

    def partition_of(self, key: ShardKey) -> int:
        return partition_of(key, self._config)

    def __len__(self) -> int:
        return sum(len(partition) for partition in self._partitions)

    # -- snapshots -------------------------------------------------------------------

    def create_snapshot(self) -> SnapshotHandle:
        """Pin the current committed watermark."""
        with self._registry_lock:
            return self._pin(self._watermark)

    def snapshot_at(self, epoch_id: int) -> SnapshotHandle:
        """Pin a historical epoch that is still fully retained."""
        with self._registry_lock:
            if epoch_id > self._watermark:
                raise HistoryUnavailableError(
                    f"Epoch {epoch_id} is beyond the committed watermark {self._watermark}")
            if epoch_id < self._horizon:
                raise HistoryUnavailableError(
                    f"Epoch {epoch_id} is older than the retained history (horizon {self._horizon})")
            return self._pin(epoch_id)

    def _pin(self, epoch_id: int) -> SnapshotHandle:
        serial = next(self._serials)
        self._live[serial] = epoch_id
        self._pins[epoch_id] = self._pins.get(epoch_id, 0) + 1
        return SnapshotHandle(self, epoch_id, serial)

    def release_snapshot(self, handle: SnapshotHandle) -> None:
        with self._registry_lock:
            if handle._released or handle._serial not in self._live:
                raise SnapshotError(f"Snapshot at epoch {handle.epoch_id} was already released")
            del self._live[handle._serial]
            remaining = self._pins[handle.epoch_id] - 1
            if remaining:
                self._pins[handle.epoch_id] = remaining
            else:
                del self._pins[handle.epoch_id]
            handle._released = True

    def live_snapshots(self) -> int:
        with self._registry_lock:
            return len(self._live)

    def horizon(self) -> int:
        """Oldest epoch that snapshot_at can still serve."""
        return self._horizon

    def _check_handle(self, snapshot: SnapshotHandle) -> None:
        if snapshot._store is not self:
            raise SnapshotError("Snapshot belongs to a different store")
        if snapshot._released:
            raise SnapshotError(f"Snapshot at epoch {snapshot.epoch_id} used after release")

    # -- reads -----------------------------------------------------------------------

    def get_at(self, key: ShardKey, snapshot: SnapshotHandle) -> Optional[ShardValue]:
        """Value of the newest version of ``key`` with epoch <= snapshot.epoch_id."""
        self._check_handle(snapshot)
        index = self.partition_of(key)
        with self._partition_locks[index]:
            chain = self._partitions[index].get(key)
            if chain is None:
                return None
            return chain.visible(snapshot.epoch_id)

    def read_committed(self, key: ShardKey) -> Optional[ShardValue]:
        """Newest installed value; used by executors for the pre-epoch state."""
        index = self.partition_of(key)
        with self._partition_locks[index]:
            chain = self._partitions[index].get(key)
            return None if chain is None else chain.newest

    def dump(self, snapshot: SnapshotHandle) -> Listing:
        """Key-ordered (key, value) listing visible at ``snapshot``."""
        self._check_handle(snapshot)
        listing: Listing = []
        for index, partition in enumerate(self._partitions):
            with self._partition_locks[index]:
                for key, chain in partition.items():
                    value = chain.visible(snapshot.epoch_id)
                    if value is not None:
                        listing.append((key, value))
        listing.sort(key=lambda item: item[0])
        return listing

    def iter_chains(self) -> Iterator[VersionChain]:
        for index, partition in enumerate(self._partitions):
            with self._partition_locks[index]:
                chains = list(partition.values())
            yield from chains

    # -- writes ----------------------------------------------------------------------

    def install_version(self, key: ShardKey, value: ShardValue, epoch_id: int) -> None:
        """Append a version for ``epoch_id``; caller is the commit coordinator."""
        value = coerce_value(key, value)
        if epoch_id <= self._watermark:
            raise MonotonicityError(
                f"Epoch {epoch_id} for {key} is not above the watermark {self._watermark}")

        index = self.partition_of(key)
        with self._partition_locks[index]:
            chain = self._partitions[index].get(key)
            if chain is None:
                chain = VersionChain(key)
                self._partitions[index][key] = chain
            newest_epoch = chain.newest_epoch
            if newest_epoch is not None and epoch_id <= newest_epoch:
                raise MonotonicityError(
                    f"Epoch {epoch_id} for {key} does not follow newest version {newest_epoch}")
            newest = chain.newest
            if isinstance(newest, np.ndarray) and newest.shape != value.shape:
                raise DimensionMismatchError(
                    f"{key} has dim {newest.size}; refusing version of dim {value.size}")
            chain.append(epoch_id, value)

            if len(chain) > self._config.max_versions:
                with self._registry_lock:
                    # The current watermark is pinned implicitly: new snapshots land there until it advances
                    floor = min(min(self._pins, default=self._watermark), self._watermark)
                    if chain.prune(self._config.max_versions, floor):
                        self._horizon = max(self._horizon, chain.epochs[0])

    def advance_watermark(self, epoch_id: int) -> None:
        """Make ``epoch_id`` visible; must be exactly one past the current watermark."""
        with self._registry_lock:
            if epoch_id != self._watermark + 1:
                raise MonotonicityError(
                    f"Watermark must advance by one: {self._watermark} -> {epoch_id}")
            self._watermark = epoch_id

    def restore(self, listing: Listing, epoch_id: int) -> None:
        """Load a dump listing as the state at ``epoch_id`` into an empty store."""
        if len(self) or self._watermark:
            raise ValidationError("restore() requires an empty store")
        if epoch_id < 0:
            raise ValidationError("restore epoch must be >= 0")
        for key, value in listing:
            value = coerce_value(key, value)
            index = self.partition_of(key)
            with self._partition_locks[index]:
                chain = VersionChain(key)
                chain.append(epoch_id, value)
                self._partitions[index][key] = chain
        with self._registry_lock:
            self._watermark = epoch_id
            self._horizon = epoch_id
        logger.debug("Restored %d keys at epoch %d", len(listing), epoch_id)
