#
# oracle.py
# TStream-Engine-py
#
# Serial reference executor: one transaction at a time in admission order, no epochs, no executor lanes.
#
# Thales Matheus Mendonça Santos - November 2025

"""Serial reference executor used to check the engine's results.

:class:`SerialOracle` exposes the same admission surface as the transaction
manager (``admit``, ``create_snapshot``, ``add_listener``) so the online
learner and the harness drive it without knowing which one they hold.
Every update runs to completion the moment it is admitted; a failing op
rejects the whole transaction and leaves the state untouched.

Readers (the learner and inference queries) see the state as of the last
batch boundary, refreshed every ``batch_size`` admitted updates, which is
where the engine's replay mode commits its epochs.
"""

import itertools
import logging
import threading
from collections import Counter
from typing import Callable, Dict, List, Optional

from .codec import encode_listing
from .errors import ValidationError
from .keys import ShardKey
from .transactions import RejectReason, ShardValue, Transaction, TxnKind, TxnOutcome, TxnStatus
from .txn_manager import AdmissionTicket

logger = logging.getLogger(__name__)


class BoundaryView:
    """Read-only view of the oracle state at one batch boundary."""

    def __init__(self, values: Dict[ShardKey, ShardValue], epoch_id: int):
        self._values = values
        self.epoch_id = epoch_id
        self.released = False

    def get(self, key: ShardKey) -> Optional[ShardValue]:
        return self._values.get(key)

    def release(self) -> None:
        self.released = True

    def __enter__(self) -> "BoundaryView":
        return self

    def __exit__(self, exc_type, exc, tb):
        self.release()


class SerialOracle:
    def __init__(self, batch_size: int = 256, *, first_txn_id: int = 0,
                 initial: Optional[list] = None, initial_epoch: int = 0):
        if batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        self.batch_size = batch_size
        self._lock = threading.RLock()
        self.state: Dict[ShardKey, ShardValue] = dict(initial or ())
        self._ids = itertools.count(first_txn_id + 1)
        self._listeners: List[Callable[[TxnOutcome], None]] = []
        self._view = BoundaryView(dict(self.state), initial_epoch)
        self._since_boundary = 0
        self._dirty = False
        self.admitted = 0
        self.committed = 0
        self.rejected: Counter = Counter()

    def add_listener(self, listener: Callable[[TxnOutcome], None]) -> None:
        self._listeners.append(listener)

    def create_snapshot(self) -> BoundaryView:
        return self._view

    @property
    def watermark(self) -> int:
        return self._view.epoch_id

    @property
    def halted(self) -> bool:
        return False

    def admit(self, txn: Transaction) -> AdmissionTicket:
        """Execute ``txn`` immediately; the returned ticket is already resolved."""
        with self._lock:
            txn_id = next(self._ids)
            txn = txn.stamped(txn_id, txn_id)
            ticket = AdmissionTicket(txn.txn_id, txn.ts, txn.kind)
            self.admitted += 1
            try:
                txn.validate()
            except ValidationError as exc:
                outcome = self._rejected(txn, str(exc))
            else:
                if txn.kind is TxnKind.INFERENCE:
                    outcome = self._read(txn)
                else:
                    outcome = self._execute(txn)
            for listener in self._listeners:
                listener(outcome)
            ticket.resolve(outcome)
            return ticket

    def _read(self, txn: Transaction) -> TxnOutcome:
        reads = tuple((op.key, self._view.get(op.key)) for op in txn.ops)
        self.committed += 1
        return TxnOutcome(txn.txn_id, txn.kind, txn.ts, TxnStatus.COMMITTED,
                          epoch_id=self._view.epoch_id, reads=reads, origin=txn.origin)

    def _execute(self, txn: Transaction) -> TxnOutcome:
        working: Dict[ShardKey, ShardValue] = {}
        failure = None
        for op in txn.ops:
            try:
                working[op.key] = op.evaluate(self.state.get(op.key))
            except ValueError as exc:
                failure = str(exc)
                break

        if failure is None:
            self.state.update(working)
            self._dirty = True
            self.committed += 1
            epoch_id = self._view.epoch_id + 1
            outcome = TxnOutcome(txn.txn_id, txn.kind, txn.ts, TxnStatus.COMMITTED, epoch_id=epoch_id,
                                 read_epoch=txn.read_epoch, origin=txn.origin)
        else:
            outcome = self._rejected(txn, failure)

        # Batch boundaries count every update that got past admission checks
        self._since_boundary += 1
        if self._since_boundary >= self.batch_size:
            self.boundary()
        return outcome

    def _rejected(self, txn: Transaction, detail: str) -> TxnOutcome:
        logger.debug("Oracle rejected txn %d: %s", txn.txn_id, detail)
        self.rejected[RejectReason.VALIDATION.value] += 1
        return TxnOutcome(txn.txn_id, txn.kind, txn.ts, TxnStatus.REJECTED, reason=RejectReason.VALIDATION,
                          detail=detail, read_epoch=txn.read_epoch, origin=txn.origin)

    def boundary(self) -> None:
        """Close the current batch: readers now see every update executed so far."""
        with self._lock:
            # An all-rejected batch forms no epoch
            epoch_id = self._view.epoch_id + 1 if self._dirty else self._view.epoch_id
            self._view = BoundaryView(dict(self.state), epoch_id)
            self._since_boundary = 0
            self._dirty = False

    def flush(self) -> None:
        if self._since_boundary:
            self.boundary()

    def dump(self) -> list:
        """Key-ordered (key, value) listing, the same shape the engine dumps."""
        return sorted(self.state.items(), key=lambda item: item[0])

    def dump_bytes(self) -> bytes:
        return encode_listing(self.dump())

    def close(self) -> None:
        self.flush()


def run_serial(transactions, *, batch_size: int = 256) -> SerialOracle:
    """Admit ``transactions`` in order into a fresh oracle and return it."""
    oracle = SerialOracle(batch_size)
    for txn in transactions:
        oracle.admit(txn)
    oracle.flush()
    return oracle

