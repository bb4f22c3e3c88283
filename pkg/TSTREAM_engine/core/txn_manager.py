#
# txn_manager.py
# TStream-Engine-py
#
# Admits transactions, seals them into epochs, runs per-key chains on executor lanes, and commits atomically.
#
# Thales Matheus Mendonça Santos - November 2025

"""Epoch-based transaction manager.

Update transactions are stamped with ``(ts, txn_id)`` at admission and
collected into an open batch. Sealing a batch turns it into per-key
operation chains ordered by ``(ts, txn_id)``; each chain belongs to the
executor lane that owns its key's partition, so lanes never share a value.
After every chain finishes, the committed transactions are logged, their
versions installed, and the watermark advanced by one.

A transaction whose op fails (dimension mismatch, non-finite result) is
rejected and excised from every chain. Failures are resolved earliest
first, re-running only the chains that held the rejected transaction,
which yields exactly the one-at-a-time result.

Inference transactions never join a batch: they read one pinned snapshot
of the last committed epoch. Sealed batches are committed outside the
admission lock, so a slow WAL append never delays a read.
"""

import functools
import itertools
import logging
import threading
import time
from collections import deque
from concurrent.futures import Future
from typing import Callable, Deque, Dict, FrozenSet, Iterable, List, NamedTuple, Optional, Tuple

from .codec import WalRecord
from .config import TxnConfig
from .errors import EngineHalted, SimulatedCrash, StorageError, TStreamError, ValidationError
from .executors import ExecutorPool
from .keys import ShardKey
from .state_store import SnapshotHandle, VersionedStore
from .transactions import (
    ChainEntry,
    EpochPlan,
    RejectReason,
    ShardValue,
    Transaction,
    TxnKind,
    TxnOutcome,
    TxnStatus,
)

logger = logging.getLogger(__name__)

OutcomeListener = Callable[[TxnOutcome], None]


class AdmissionTicket:
    """Handle returned by ``admit``; resolves to exactly one TxnOutcome."""

    __slots__ = ("txn_id", "ts", "kind", "_future")

    def __init__(self, txn_id: int, ts: int, kind: TxnKind):
        self.txn_id = txn_id
        self.ts = ts
        self.kind = kind
        self._future: "Future[TxnOutcome]" = Future()

    def done(self) -> bool:
        return self._future.done()

    def outcome(self, timeout: Optional[float] = None) -> TxnOutcome:
        return self._future.result(timeout)

    def rejected_with(self, reason: RejectReason) -> bool:
        return self.done() and self.outcome().reason is reason

    def resolve(self, outcome: TxnOutcome) -> None:
        self._future.set_result(outcome)

    def __repr__(self) -> str:
        return f"AdmissionTicket(txn_id={self.txn_id}, ts={self.ts}, kind={self.kind.value})"


class _ChainResult(NamedTuple):
    value: Optional[ShardValue]
    touched: bool
    # (ts, txn_id, detail) of the first op that failed, if any
    failure: Optional[Tuple[int, int, str]]


class TransactionManager:
    """Admission front-end, epoch sealer, and commit coordinator."""

    def __init__(self, store: VersionedStore, config: Optional[TxnConfig] = None, *,
                 durability=None, pool: Optional[ExecutorPool] = None, first_txn_id: int = 0,
                 first_cursor: int = 0):
        self.store = store
        self.config = config or TxnConfig()
        self.durability = durability
        self._owns_pool = pool is None
        self.pool = pool or ExecutorPool(self.config.executors)

        self._admission_lock = threading.Lock()
        self._wakeup = threading.Condition(self._admission_lock)
        self._commit_lock = threading.Lock()
        self._idle = threading.Condition(threading.Lock())

        self._ids = itertools.count(first_txn_id + 1)
        self._clock = itertools.count(first_txn_id + 1)
        self._open: List[Transaction] = []
        # Taken batches in admission order, committed FIFO under _commit_lock
        self._sealed: Deque[List[Transaction]] = deque()
        # Guarded by _commit_lock
        self.input_cursor = first_cursor
        self._batch_started = 0.0
        # Both guarded by _idle
        self._sealing = 0
        self._pending_updates = 0
        self._tickets: Dict[int, AdmissionTicket] = {}
        self._admitted_ns: Dict[int, int] = {}
        self._listeners: List[OutcomeListener] = []
        self._halted: Optional[str] = None
        self._stopping = False

        self.admitted = 0
        self.epochs_committed = 0
        self.epoch_sizes: List[int] = []

        self._sealer: Optional[threading.Thread] = None
        if self.config.auto_seal:
            self._sealer = threading.Thread(target=self._sealer_loop, name="tstream-sealer", daemon=True)
            self._sealer.start()

    # -- wiring --------------------------------------------------------------------

    def add_listener(self, listener: OutcomeListener) -> None:
        """Register a callable receiving every TxnOutcome (the metrics sink among them)."""
        self._listeners.append(listener)

    def create_snapshot(self) -> SnapshotHandle:
        return self.store.create_snapshot()

    @property
    def halted(self) -> bool:
        return self._halted is not None

    @property
    def watermark(self) -> int:
        return self.store.watermark

    # -- admission -----------------------------------------------------------------

    def admit(self, txn: Transaction) -> AdmissionTicket:
        """Stamp ``txn`` and route it; malformed or excess transactions resolve as rejected."""
        with self._admission_lock:
            if self._halted is not None:
                raise EngineHalted(f"Engine halted: {self._halted}")
            txn = txn.stamped(next(self._ids), next(self._clock))
            ticket = AdmissionTicket(txn.txn_id, txn.ts, txn.kind)
            self._admitted_ns[txn.txn_id] = time.perf_counter_ns()
            self._tickets[txn.txn_id] = ticket
            self.admitted += 1

            try:
                txn.validate()
            except ValidationError as exc:
                self._resolve(self._rejection(txn, RejectReason.VALIDATION, str(exc)))
                return ticket

            if txn.kind is TxnKind.INFERENCE:
                snapshot = self.store.create_snapshot()
            else:
                self._enqueue(txn)
        if txn.kind is TxnKind.INFERENCE:
            self._resolve(self.serve_inference(txn, snapshot))
        else:
            self._drain_sealed()
        return ticket

    def _enqueue(self, txn: Transaction) -> None:
        # Caller holds the admission lock
        with self._idle:
            saturated = self._pending_updates >= self.config.queue_capacity
            if not saturated:
                self._pending_updates += 1
        if saturated:
            logger.debug("Admission queue full; rejecting txn %d", txn.txn_id)
            self._resolve(self._rejection(txn, RejectReason.BACKPRESSURE, "admission queue full"))
            return

        if not self._open:
            self._batch_started = time.monotonic()
        self._open.append(txn)
        if self._sealer is not None:
            self._wakeup.notify()
        elif len(self._open) >= self.config.batch_size:
            self._sealed.append(self._take_batch())

    def _take_batch(self) -> List[Transaction]:
        # Caller holds the admission lock
        batch = self._open[: self.config.batch_size]
        self._open = self._open[self.config.batch_size:]
        if self._open:
            self._batch_started = time.monotonic()
        if batch:
            with self._idle:
                self._sealing += 1
        return batch

    def flush(self) -> None:
        """Commit everything admitted so far and wait for in-progress epochs."""
        with self._admission_lock:
            while self._open:
                self._sealed.append(self._take_batch())
        self._drain_sealed()
        with self._idle:
            while self._sealing:
                self._idle.wait()

    # -- epochs --------------------------------------------------------------------

    def seal_epoch(self, batch: Iterable[Transaction]) -> Optional[EpochPlan]:
        """Build per-key chains for ``batch``; an empty batch forms no epoch."""
        ordered = tuple(sorted(batch, key=lambda txn: txn.order_key))
        if not ordered:
            return None
        plan = EpochPlan(self.store.watermark + 1, ordered)
        for txn in ordered:
            for op in txn.ops:
                plan.chains.setdefault(op.key, []).append(ChainEntry(txn.ts, txn.txn_id, op))
        for key in plan.chains:
            plan.assignment[key] = self.pool.lane_for(self.store.partition_of(key))
        logger.debug("Sealed epoch %d: %d txns, %d chains", plan.epoch_id, len(ordered), len(plan.chains))
        return plan

    def _run_chain(self, key: ShardKey, chain: List[ChainEntry], rejected: FrozenSet[int]) -> _ChainResult:
        value = self.store.read_committed(key)
        touched = False
        for entry in chain:
            if entry.txn_id in rejected:
                continue
            try:
                value = entry.op.evaluate(value)
            except ValueError as exc:
                return _ChainResult(value, touched, (entry.ts, entry.txn_id, str(exc)))
            touched = True
        return _ChainResult(value, touched, None)

    def _run_lane(self, plan: EpochPlan, keys: List[ShardKey], rejected: FrozenSet[int]) -> Dict[ShardKey, _ChainResult]:
        return {key: self._run_chain(key, plan.chains[key], rejected) for key in keys}

    def _run_chains(self, plan: EpochPlan, keys: Iterable[ShardKey],
                    rejected: FrozenSet[int]) -> Dict[ShardKey, _ChainResult]:
        by_lane: Dict[int, List[ShardKey]] = {}
        for key in sorted(keys):
            by_lane.setdefault(plan.assignment[key], []).append(key)
        tasks = {lane: functools.partial(self._run_lane, plan, lane_keys, rejected)
                 for lane, lane_keys in by_lane.items()}
        results: Dict[ShardKey, _ChainResult] = {}
        for lane_results in self.pool.run_lanes(tasks).values():
            results.update(lane_results)
        return results

    def _install_lane(self, epoch_id: int, items: List[Tuple[ShardKey, ShardValue]]) -> None:
        for key, value in items:
            self.store.install_version(key, value, epoch_id)

    def execute_epoch(self, plan: EpochPlan) -> List[TxnOutcome]:
        """Run the plan's chains, log and install the committed result, and emit outcomes."""
        results = self._run_chains(plan, plan.chains.keys(), frozenset())
        keys_of = {txn.txn_id: txn.keys() for txn in plan.transactions}
        rejected: Dict[int, str] = {}
        while True:
            failures = [result.failure for result in results.values() if result.failure is not None]
            if not failures:
                break
            _, txn_id, detail = min(failures)
            rejected[txn_id] = detail
            results.update(self._run_chains(plan, keys_of[txn_id], frozenset(rejected)))

        # Rejected txns settle their input too; an all-rejected epoch carries over
        self.input_cursor = max([self.input_cursor] + [txn.input_seq for txn in plan.transactions
                                                       if txn.input_seq is not None])
        committed = tuple(txn for txn in plan.transactions if txn.txn_id not in rejected)
        if committed:
            try:
                if self.durability is not None:
                    self.durability.append_epoch(WalRecord(plan.epoch_id, committed, self.input_cursor))
            except SimulatedCrash:
                self._halted = "simulated crash"
                raise
            except StorageError as exc:
                logger.error("Epoch %d not committed, halting: %s", plan.epoch_id, exc)
                self._halted = str(exc)
                outcomes = [self._rejection(txn, RejectReason.HALTED, str(exc)) for txn in plan.transactions]
                for outcome in outcomes:
                    self._resolve(outcome)
                return outcomes

            by_lane: Dict[int, List[Tuple[ShardKey, ShardValue]]] = {}
            for key in sorted(results):
                if results[key].touched:
                    by_lane.setdefault(plan.assignment[key], []).append((key, results[key].value))
            self.pool.run_lanes({lane: functools.partial(self._install_lane, plan.epoch_id, items)
                                 for lane, items in by_lane.items()})
            self.store.advance_watermark(plan.epoch_id)
            self.epochs_committed += 1
            self.epoch_sizes.append(len(plan.transactions))
            logger.debug("Committed epoch %d (%d committed, %d rejected)",
                         plan.epoch_id, len(committed), len(rejected))
            if self.durability is not None:
                self.durability.after_commit(plan.epoch_id)

        outcomes = []
        for txn in plan.transactions:
            if txn.txn_id in rejected:
                outcome = self._rejection(txn, RejectReason.VALIDATION, rejected[txn.txn_id])
            else:
                outcome = self._outcome(txn, TxnStatus.COMMITTED, epoch_id=plan.epoch_id)
            outcomes.append(outcome)
            self._resolve(outcome)
        return outcomes

    def _drain_sealed(self) -> None:
        while True:
            with self._commit_lock:
                try:
                    batch = self._sealed.popleft()
                except IndexError:
                    return
                self._commit_batch(batch)

    def _commit_batch(self, batch: List[Transaction]) -> List[TxnOutcome]:
        # Caller holds _commit_lock
        try:
            if self._halted is not None:
                outcomes = [self._rejection(txn, RejectReason.HALTED, self._halted) for txn in batch]
                for outcome in outcomes:
                    self._resolve(outcome)
                return outcomes
            plan = self.seal_epoch(batch)
            return self.execute_epoch(plan) if plan is not None else []
        finally:
            with self._idle:
                self._sealing -= 1
                self._pending_updates -= len(batch)
                self._idle.notify_all()

    def reset_cursor(self, cursor: int) -> None:
        """Input position the next logged epoch counts from."""
        with self._commit_lock:
            self.input_cursor = cursor

    def checkpoint(self):
        """Checkpoint the current watermark between epochs; None when a background checkpoint is running."""
        if self.durability is None:
            raise StorageError("No durability directory configured")
        with self._commit_lock:
            return self.durability.request_checkpoint()

    # -- inference -----------------------------------------------------------------

    def serve_inference(self, txn: Transaction, snapshot: SnapshotHandle) -> TxnOutcome:
        """Answer every Read of ``txn`` from ``snapshot``, then release it."""
        try:
            reads = tuple((op.key, snapshot.get(op.key)) for op in txn.ops)
        finally:
            snapshot.release()
        return self._outcome(txn, TxnStatus.COMMITTED, epoch_id=snapshot.epoch_id, reads=reads)

    # -- outcomes ------------------------------------------------------------------

    def _outcome(self, txn: Transaction, status: TxnStatus, **fields) -> TxnOutcome:
        started = self._admitted_ns.pop(txn.txn_id, None)
        latency = time.perf_counter_ns() - started if started is not None else 0
        return TxnOutcome(txn.txn_id, txn.kind, txn.ts, status, latency_ns=latency,
                          read_epoch=txn.read_epoch, origin=txn.origin, **fields)

    def _rejection(self, txn: Transaction, reason: RejectReason, detail: str) -> TxnOutcome:
        logger.debug("Rejected txn %s (%s): %s", txn.txn_id, reason.value, detail)
        return self._outcome(txn, TxnStatus.REJECTED, reason=reason, detail=detail)

    def _resolve(self, outcome: TxnOutcome) -> None:
        ticket = self._tickets.pop(outcome.txn_id, None)
        for listener in self._listeners:
            try:
                listener(outcome)
            except TStreamError:
                raise
            except Exception as exc:  # noqa: BLE001
                logger.warning("Outcome listener failed: %s", exc)
        if ticket is not None:
            ticket.resolve(outcome)

    # -- live mode -----------------------------------------------------------------

    def _sealer_loop(self) -> None:
        timeout = self.config.batch_timeout_ms / 1000.0
        while True:
            with self._wakeup:
                while not self._open and not self._stopping:
                    self._wakeup.wait()
                if not self._open:
                    return
                deadline = self._batch_started + timeout
                while len(self._open) < self.config.batch_size and not self._stopping:
                    remaining = deadline - time.monotonic()
                    if remaining <= 0:
                        break
                    self._wakeup.wait(remaining)
                self._sealed.append(self._take_batch())
            try:
                self._drain_sealed()
            except TStreamError as exc:
                logger.error("Background sealer stopped: %s", exc)
                self._halted = self._halted or str(exc)
                return

    def close(self) -> None:
        """Stop the sealer, commit what is open, and release executor lanes."""
        if self._sealer is not None:
            with self._wakeup:
                self._stopping = True
                self._wakeup.notify_all()
            self._sealer.join()
            self._sealer = None
        if self._halted is None:
            self.flush()
        if self._owns_pool:
            self.pool.close()

    def __enter__(self) -> "TransactionManager":
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()
