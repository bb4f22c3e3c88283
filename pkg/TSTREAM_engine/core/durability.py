#
# durability.py
# TStream-Engine-py
#
# Implements the write-ahead log, manifest-last checkpoints, crash injection, and redo recovery.
#
# Thales Matheus Mendonça Santos - November 2025

"""Write-ahead logging, checkpoints, and recovery.

Layout under the durability directory::

    wal/wal-<first epoch>.log           length-prefixed, CRC32C-framed epoch records
    checkpoints/checkpoint-<seq>.dump   key-ordered state dump at one epoch
    checkpoints/checkpoint-<seq>.manifest

A checkpoint counts only once its manifest exists; the manifest is renamed
into place after the dump is durable, so a crash mid-checkpoint leaves the
previous checkpoint authoritative.
"""

import logging
import os
import queue
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from .codec import WalRecord, checksum, decode_listing, encode_frame, encode_listing, scan_frames
from .config import DurabilityConfig, StoreConfig
from .errors import CorruptRecordError, MonotonicityError, SimulatedCrash, StorageError, TStreamError
from .keys import ShardKey
from .state_store import SnapshotHandle, VersionedStore
from .transactions import ShardValue

logger = logging.getLogger(__name__)

WAL_DIR = "wal"
CHECKPOINT_DIR = "checkpoints"


def _fsync_dir(path: Path) -> None:
    # Directory fsync makes renames durable; not every platform allows opening a directory
    try:
        fd = os.open(str(path), os.O_RDONLY)
    except OSError:
        return
    try:
        os.fsync(fd)
    except OSError:
        pass
    finally:
        os.close(fd)


def _segment_name(first_epoch: int) -> str:
    return f"wal-{first_epoch:016d}.log"


def _segment_epoch(path: Path) -> int:
    return int(path.stem.split("-", 1)[1])


def list_segments(directory: Path) -> List[Path]:
    wal_dir = Path(directory) / WAL_DIR
    if not wal_dir.exists():
        return []
    return sorted(wal_dir.glob("wal-*.log"), key=_segment_epoch)


class CrashInjector:
    """Fails the process image at a chosen WAL byte offset or right after a chosen epoch is durable."""

    def __init__(self, at_byte: Optional[int] = None, after_epoch: Optional[int] = None):
        self.at_byte = at_byte
        self.after_epoch = after_epoch
        self.triggered = False

    def clip(self, written_total: int, frame: bytes) -> bytes:
        """Bytes of ``frame`` that reach the disk before the crash point."""
        if self.at_byte is None or written_total + len(frame) <= self.at_byte:
            return frame
        return frame[:max(self.at_byte - written_total, 0)]


class WriteAheadLog:
    """Segmented append-only log of committed epochs."""

    def __init__(self, directory: Union[str, Path], *, fsync_every: int = 1,
                 crash: Optional[CrashInjector] = None, last_epoch: int = 0):
        self.directory = Path(directory)
        self._wal_dir = self.directory / WAL_DIR
        self._wal_dir.mkdir(parents=True, exist_ok=True)
        self._fsync_every = fsync_every
        self._crash = crash
        self._lock = threading.Lock()
        self._last_epoch = last_epoch
        self._appended = 0
        self._written_total = sum(path.stat().st_size for path in list_segments(self.directory))
        segments = list_segments(self.directory)
        self._segment_path = segments[-1] if segments else self._wal_dir / _segment_name(last_epoch + 1)
        self._file = self._open(self._segment_path)

    def _open(self, path: Path):
        try:
            handle = open(path, "ab")
        except OSError as exc:
            raise StorageError(f"Cannot open WAL segment {path}: {exc}") from exc
        _fsync_dir(self._wal_dir)
        return handle

    @property
    def last_epoch(self) -> int:
        return self._last_epoch

    @property
    def bytes_written(self) -> int:
        return self._written_total

    def append_epoch(self, record: WalRecord) -> int:
        """Durably append ``record``; returns the frame size. Must precede visibility."""
        with self._lock:
            if record.epoch_id <= self._last_epoch:
                raise MonotonicityError(
                    f"WAL append of epoch {record.epoch_id} after epoch {self._last_epoch}")
            frame = encode_frame(record)
            payload = self._crash.clip(self._written_total, frame) if self._crash else frame
            try:
                self._file.write(payload)
                self._file.flush()
                self._appended += 1
                torn = len(payload) < len(frame)
                if torn or self._appended % self._fsync_every == 0:
                    os.fsync(self._file.fileno())
            except OSError as exc:
                logger.error("WAL append failed for epoch %d: %s", record.epoch_id, exc)
                raise StorageError(f"WAL append failed: {exc}") from exc
            self._written_total += len(payload)

            if torn:
                self._crash.triggered = True
                raise SimulatedCrash(
                    f"Injected crash at WAL byte {self._crash.at_byte} during epoch {record.epoch_id}")
            self._last_epoch = record.epoch_id
            if self._crash and self._crash.after_epoch == record.epoch_id:
                self._crash.triggered = True
                raise SimulatedCrash(f"Injected crash after durable append of epoch {record.epoch_id}")
            return len(frame)

    def sync(self) -> None:
        with self._lock:
            try:
                self._file.flush()
                os.fsync(self._file.fileno())
            except OSError as exc:
                raise StorageError(f"WAL sync failed: {exc}") from exc

    def rotate(self) -> Path:
        """Start a new segment for the epochs after the last appended one."""
        with self._lock:
            self._file.flush()
            os.fsync(self._file.fileno())
            self._file.close()
            self._segment_path = self._wal_dir / _segment_name(self._last_epoch + 1)
            self._file = self._open(self._segment_path)
            return self._segment_path

    def prune_through(self, epoch_id: int) -> int:
        """Delete closed segments whose records all have epoch <= ``epoch_id``."""
        removed = 0
        with self._lock:
            segments = list_segments(self.directory)
            for current, following in zip(segments, segments[1:]):
                if current == self._segment_path:
                    break
                if _segment_epoch(following) - 1 <= epoch_id:
                    current.unlink(missing_ok=True)
                    removed += 1
        if removed:
            logger.info("Pruned %d WAL segment(s) through epoch %d", removed, epoch_id)
        return removed

    def close(self) -> None:
        with self._lock:
            if self._file and not self._file.closed:
                try:
                    self._file.flush()
                    os.fsync(self._file.fileno())
                finally:
                    self._file.close()


@dataclass(frozen=True)
class CheckpointManifest:
    epoch_id: int
    file: str
    crc: int
    sequence: int
    # Input cursor of the checkpoint epoch; manifests without one read as 0
    cursor: int = 0

    def to_text(self) -> str:
        return (f"epoch={self.epoch_id}\nfile={self.file}\n"
                f"crc=0x{self.crc:08x}\nsequence={self.sequence}\ncursor={self.cursor}\n")

    @classmethod
    def from_text(cls, text: str) -> "CheckpointManifest":
        fields: Dict[str, str] = {}
        for line in text.splitlines():
            if "=" in line:
                name, _, value = line.partition("=")
                fields[name.strip()] = value.strip()
        try:
            return cls(
                epoch_id=int(fields["epoch"]),
                file=fields["file"],
                crc=int(fields["crc"], 16),
                sequence=int(fields["sequence"]),
                cursor=int(fields.get("cursor", "0")),
            )
        except (KeyError, ValueError) as exc:
            raise CorruptRecordError(f"Malformed checkpoint manifest: {exc}") from exc


class CheckpointStore:
    """Writes, validates, lists, and retires checkpoints."""

    def __init__(self, directory: Union[str, Path], *, retain: int = 2):
        self.directory = Path(directory) / CHECKPOINT_DIR
        self.directory.mkdir(parents=True, exist_ok=True)
        self.retain = retain
        self._lock = threading.Lock()

    def manifests(self) -> List[CheckpointManifest]:
        """Parsable manifests, newest sequence first."""
        found = []
        for path in self.directory.glob("checkpoint-*.manifest"):
            try:
                found.append(CheckpointManifest.from_text(path.read_text(encoding="utf-8")))
            except (OSError, CorruptRecordError) as exc:
                logger.warning("Ignoring unreadable manifest %s: %s", path.name, exc)
        return sorted(found, key=lambda manifest: manifest.sequence, reverse=True)

    def load(self, manifest: CheckpointManifest) -> List[Tuple[ShardKey, ShardValue]]:
        """Validated listing of ``manifest``'s dump; raises CorruptRecordError if damaged."""
        try:
            data = (self.directory / manifest.file).read_bytes()
        except OSError as exc:
            raise CorruptRecordError(f"Checkpoint dump {manifest.file} unreadable: {exc}") from exc
        if checksum(data) != manifest.crc:
            raise CorruptRecordError(f"Checkpoint dump {manifest.file} fails its CRC")
        epoch_id, listing = decode_listing(data)
        if epoch_id != manifest.epoch_id:
            raise CorruptRecordError(f"Checkpoint dump {manifest.file} is for epoch {epoch_id}")
        return listing

    def latest_valid(self) -> Optional[Tuple[CheckpointManifest, list]]:
        for manifest in self.manifests():
            try:
                return manifest, self.load(manifest)
            except CorruptRecordError as exc:
                logger.warning("Skipping checkpoint %d: %s", manifest.sequence, exc)
        return None

    def write(self, listing, epoch_id: int, cursor: int = 0) -> CheckpointManifest:
        """Write dump then manifest (atomic rename); retire checkpoints beyond ``retain``."""
        with self._lock:
            existing = self.manifests()
            sequence = (existing[0].sequence if existing else 0) + 1
            stem = f"checkpoint-{sequence:06d}"
            data = encode_listing(listing, epoch_id)
            manifest = CheckpointManifest(epoch_id, f"{stem}.dump", checksum(data), sequence, cursor)
            try:
                self._write_atomic(self.directory / manifest.file, data)
                self._write_atomic(self.directory / f"{stem}.manifest", manifest.to_text().encode("utf-8"))
            except OSError as exc:
                logger.error("Checkpoint at epoch %d failed: %s", epoch_id, exc)
                raise StorageError(f"Checkpoint write failed: {exc}") from exc
            self._retire([manifest] + existing)
            logger.info("Checkpoint %d written at epoch %d (%d keys)", sequence, epoch_id, len(listing))
            return manifest

    def _write_atomic(self, path: Path, data: bytes) -> None:
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "wb") as handle:
            handle.write(data)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp, path)
        _fsync_dir(self.directory)

    def _retire(self, manifests: List[CheckpointManifest]) -> None:
        for manifest in manifests[self.retain:]:
            stem = manifest.file.rsplit(".", 1)[0]
            # Manifest goes first so a half-retired checkpoint is never considered valid
            (self.directory / f"{stem}.manifest").unlink(missing_ok=True)
            (self.directory / manifest.file).unlink(missing_ok=True)

    def oldest_retained_epoch(self) -> Optional[int]:
        manifests = self.manifests()[: self.retain]
        return min((manifest.epoch_id for manifest in manifests), default=None)


@dataclass(frozen=True)
class RecoveryReport:
    restored_epoch: int
    checkpoint_epoch: int
    replayed_epochs: int
    truncated_bytes: int
    checkpoint_sequence: Optional[int] = None
    stop_reason: Optional[str] = None
    # Highest txn id seen in the surviving log; new ids start above it
    last_txn_id: int = 0
    # Input position to resume a replay from
    cursor: int = 0
    duration_ms: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        return {
            "restored_epoch": self.restored_epoch,
            "checkpoint_epoch": self.checkpoint_epoch,
            "replayed_epochs": self.replayed_epochs,
            "truncated_bytes": self.truncated_bytes,
            "checkpoint_sequence": self.checkpoint_sequence,
            "stop_reason": self.stop_reason,
            "last_txn_id": self.last_txn_id,
            "cursor": self.cursor,
            "duration_ms": round(self.duration_ms, 3),
        }


def redo_record(store: VersionedStore, record: WalRecord) -> None:
    """Re-execute a logged epoch in (ts, txn_id) order, install it, and advance the watermark."""
    if record.epoch_id != store.watermark + 1:
        raise CorruptRecordError(
            f"WAL epoch {record.epoch_id} does not follow restored epoch {store.watermark}")
    working: Dict[ShardKey, ShardValue] = {}
    for txn in sorted(record.transactions, key=lambda txn: txn.order_key):
        for op in txn.ops:
            prior = working[op.key] if op.key in working else store.read_committed(op.key)
            try:
                working[op.key] = op.evaluate(prior)
            except ValueError as exc:
                raise CorruptRecordError(f"Logged op on {op.key} no longer applies: {exc}") from exc
    for key in sorted(working):
        store.install_version(key, working[key], record.epoch_id)
    store.advance_watermark(record.epoch_id)


def recover(directory: Union[str, Path], store_config: Optional[StoreConfig] = None, *,
            truncate_tail: bool = False) -> Tuple[VersionedStore, RecoveryReport]:
    """Rebuild the committed prefix from the newest valid checkpoint plus the WAL tail.

    Scanning stops at the first torn, corrupt, or non-consecutive record. With
    ``truncate_tail`` the invalid suffix is cut from disk so the log can be
    appended to again; without it recovery leaves the files untouched and
    repeated runs report the same result.
    """
    started = time.perf_counter()
    directory = Path(directory)
    store = VersionedStore(store_config)

    checkpoint_epoch, sequence, cursor = 0, None, 0
    if (directory / CHECKPOINT_DIR).exists():
        latest = CheckpointStore(directory).latest_valid()
        if latest is not None:
            manifest, listing = latest
            store.restore(listing, manifest.epoch_id)
            checkpoint_epoch, sequence, cursor = manifest.epoch_id, manifest.sequence, manifest.cursor

    replayed = 0
    truncated = 0
    last_txn_id = 0
    stop_reason: Optional[str] = None
    cut: Optional[Tuple[Path, int]] = None
    segments = list_segments(directory)
    for index, segment in enumerate(segments):
        data = segment.read_bytes()
        records, valid_end, problem = scan_frames(data)
        for offset, record in records:
            if record.epoch_id <= store.watermark:
                last_txn_id = max([last_txn_id] + [txn.txn_id for txn in record.transactions])
                continue
            try:
                redo_record(store, record)
            except CorruptRecordError as exc:
                problem, valid_end = str(exc), offset
                break
            replayed += 1
            cursor = max(cursor, record.cursor)
            last_txn_id = max([last_txn_id] + [txn.txn_id for txn in record.transactions])
        if problem is not None:
            stop_reason = problem
            cut = (segment, valid_end)
            truncated = len(data) - valid_end + sum(path.stat().st_size for path in segments[index + 1:])
            break

    if cut is not None and truncate_tail:
        segment, valid_end = cut
        with open(segment, "r+b") as handle:
            handle.truncate(valid_end)
            handle.flush()
            os.fsync(handle.fileno())
        for path in segments[segments.index(segment) + 1:]:
            path.unlink(missing_ok=True)
        logger.info("Truncated %d byte(s) of WAL tail at %s:%d", truncated, segment.name, valid_end)

    report = RecoveryReport(
        restored_epoch=store.watermark,
        checkpoint_epoch=checkpoint_epoch,
        replayed_epochs=replayed,
        truncated_bytes=truncated,
        checkpoint_sequence=sequence,
        stop_reason=stop_reason,
        last_txn_id=last_txn_id,
        cursor=cursor,
        duration_ms=(time.perf_counter() - started) * 1000.0,
    )
    logger.info("Recovered to epoch %d (checkpoint %d + %d replayed, %d byte(s) torn)",
                report.restored_epoch, checkpoint_epoch, replayed, truncated)
    return store, report


class DurabilityManager:
    """WAL appends plus periodic checkpoints taken from pinned snapshots."""

    def __init__(self, config: DurabilityConfig, *, crash: Optional[CrashInjector] = None,
                 last_epoch: int = 0, last_cursor: int = 0):
        if config.directory is None:
            raise ValueError("DurabilityManager needs a directory")
        self.config = config
        self.directory = Path(config.directory)
        self.wal = WriteAheadLog(self.directory, fsync_every=config.fsync_every, crash=crash,
                                 last_epoch=last_epoch)
        self.checkpoints = CheckpointStore(self.directory, retain=config.retain_checkpoints)
        self._store: Optional[VersionedStore] = None
        self._pending: "queue.Queue[Optional[SnapshotHandle]]" = queue.Queue()
        self._worker: Optional[threading.Thread] = None
        self._in_flight = threading.Event()
        self._errors: List[TStreamError] = []
        self.checkpoints_written = 0
        # Input cursor per durable epoch, kept until a checkpoint covers it
        self._cursors: Dict[int, int] = {last_epoch: last_cursor}
        self._cursor_lock = threading.Lock()

    def attach(self, store: VersionedStore) -> None:
        self._store = store
        if self.config.background_checkpoints and self._worker is None:
            self._worker = threading.Thread(target=self._run, name="tstream-checkpointer", daemon=True)
            self._worker.start()

    def append_epoch(self, record: WalRecord) -> int:
        size = self.wal.append_epoch(record)
        with self._cursor_lock:
            self._cursors[record.epoch_id] = record.cursor
        return size

    def cursor_at(self, epoch_id: int) -> int:
        """Cursor logged with the newest durable epoch <= ``epoch_id``."""
        with self._cursor_lock:
            known = [epoch for epoch in self._cursors if epoch <= epoch_id]
            return self._cursors[max(known)] if known else 0

    def _forget_cursors_before(self, epoch_id: int) -> None:
        with self._cursor_lock:
            for epoch in [epoch for epoch in self._cursors if epoch < epoch_id]:
                del self._cursors[epoch]

    def after_commit(self, epoch_id: int) -> None:
        """Called by the commit coordinator once ``epoch_id`` is visible."""
        if epoch_id % self.config.checkpoint_every == 0:
            self.request_checkpoint()

    def request_checkpoint(self) -> Optional[CheckpointManifest]:
        if self._store is None:
            raise RuntimeError("DurabilityManager is not attached to a store")
        if self._worker is not None and self._in_flight.is_set():
            logger.debug("Checkpoint already in progress; skipping request at epoch %d", self._store.watermark)
            return None
        snapshot = self._store.create_snapshot()
        # Records after the checkpoint epoch start a fresh segment so older ones can be pruned whole
        self.wal.rotate()
        if self._worker is None:
            return self._checkpoint(snapshot)
        self._in_flight.set()
        self._pending.put(snapshot)
        return None

    def _checkpoint(self, snapshot: SnapshotHandle) -> CheckpointManifest:
        try:
            manifest = self.checkpoints.write(self._store.dump(snapshot), snapshot.epoch_id,
                                              self.cursor_at(snapshot.epoch_id))
        finally:
            snapshot.release()
        self.checkpoints_written += 1
        self._forget_cursors_before(manifest.epoch_id)
        oldest = self.checkpoints.oldest_retained_epoch()
        if oldest is not None:
            self.wal.prune_through(oldest)
        return manifest

    def _run(self) -> None:
        while True:
            snapshot = self._pending.get()
            if snapshot is None:
                self._pending.task_done()
                return
            try:
                self._checkpoint(snapshot)
            except TStreamError as exc:
                self._errors.append(exc)
            except Exception as exc:  # noqa: BLE001
                logger.error("Background checkpoint failed: %s", exc)
                self._errors.append(StorageError(str(exc)))
            finally:
                self._in_flight.clear()
                self._pending.task_done()

    def wait(self) -> None:
        """Block until queued checkpoints finish; re-raise the first background failure."""
        if self._worker is not None:
            self._pending.join()
        if self._errors:
            raise self._errors[0]

    def close(self) -> None:
        if self._worker is not None:
            self._pending.put(None)
            self._worker.join()
            self._worker = None
        self.wal.close()
