#
# transactions.py
# TStream-Engine-py
#
# Defines state operations, transactions, outcomes, and epoch plans exchanged by the engine components.
#
# Thales Matheus Mendonça Santos - November 2025

"""Transaction data model."""

import math
import struct
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DimensionMismatchError, ValidationError
from .keys import ShardKey

MAX_META_BYTES = 64 * 1024

# (count u64, total f64) record accumulated by Tally ops
TALLY_RECORD = struct.Struct("<Qd")

ShardValue = Union[np.ndarray, bytes]


def as_params_vector(value, *, what: str = "value") -> np.ndarray:
    """Coerce ``value`` into a read-only 1-D float64 vector of dim >= 1."""
    try:
        vector = np.array(value, dtype=np.float64).reshape(-1) if np.ndim(value) else None
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{what} is not a numeric vector: {exc}") from exc
    if vector is None or vector.size == 0:
        raise ValidationError(f"{what} must be a vector with dim >= 1")
    vector.setflags(write=False)
    return vector


def as_meta_bytes(value) -> bytes:
    if not isinstance(value, (bytes, bytearray, memoryview)):
        raise ValidationError("Meta values must be byte strings")
    value = bytes(value)
    if len(value) > MAX_META_BYTES:
        raise ValidationError(f"Meta value exceeds {MAX_META_BYTES} bytes")
    return value


def coerce_value(key: ShardKey, value) -> ShardValue:
    """Validate a full value for ``key`` according to its namespace."""
    if key.is_params:
        vector = as_params_vector(value)
        if not np.all(np.isfinite(vector)):
            raise ValidationError(f"Non-finite value for {key}")
        return vector
    return as_meta_bytes(value)


def tally_fields(data, *, what: str = "tally record") -> Tuple[int, float]:
    if not isinstance(data, (bytes, bytearray)) or len(data) != TALLY_RECORD.size:
        raise ValidationError(f"{what} must be {TALLY_RECORD.size} bytes")
    return TALLY_RECORD.unpack(bytes(data))


class OpKind(IntEnum):
    READ = 0
    WRITE = 1
    APPLY = 2
    TALLY = 3


@dataclass(frozen=True)
class StateOp:
    """One read, write, delta-apply, or tally against a single key.

    A Tally writes a Meta record computed at execution time: the key's prior
    ``(count, total)`` plus this op's own, so a transaction excised from its
    epoch leaves no trace in the record.
    """

    key: ShardKey
    kind: OpKind
    value: Optional[ShardValue] = None

    @classmethod
    def read(cls, key: ShardKey) -> "StateOp":
        return cls(key, OpKind.READ)

    @classmethod
    def write(cls, key: ShardKey, value) -> "StateOp":
        return cls(key, OpKind.WRITE, coerce_value(key, value))

    @classmethod
    def apply(cls, key: ShardKey, delta) -> "StateOp":
        if not key.is_params:
            raise ValidationError(f"Apply targets Params keys only, got {key}")
        vector = as_params_vector(delta, what="delta")
        if not np.all(np.isfinite(vector)):
            raise ValidationError(f"Non-finite delta for {key}")
        return cls(key, OpKind.APPLY, vector)

    @classmethod
    def tally(cls, key: ShardKey, amount: float, count: int = 1) -> "StateOp":
        if key.is_params:
            raise ValidationError(f"Tally targets Meta keys only, got {key}")
        if count < 0 or not math.isfinite(amount):
            raise ValidationError(f"Invalid tally ({count}, {amount}) for {key}")
        return cls(key, OpKind.TALLY, TALLY_RECORD.pack(count, float(amount)))

    def evaluate(self, prior: Optional[ShardValue]) -> ShardValue:
        """Value after this op given the key's prior value; raises on invalid results."""
        if self.kind is OpKind.WRITE:
            if self.key.is_params and isinstance(prior, np.ndarray) and prior.shape != self.value.shape:
                raise DimensionMismatchError(
                    f"Write of dim {self.value.size} to {self.key} of dim {prior.size}")
            return self.value
        if self.kind is OpKind.APPLY:
            if prior is None:
                base = np.zeros_like(self.value)
            elif prior.shape != self.value.shape:
                raise DimensionMismatchError(
                    f"Delta of dim {self.value.size} for {self.key} of dim {prior.size}")
            else:
                base = prior
            with np.errstate(over="ignore", invalid="ignore"):
                result = base + self.value
            if not np.all(np.isfinite(result)):
                raise ValidationError(f"Non-finite result for {self.key}")
            result.setflags(write=False)
            return result
        if self.kind is OpKind.TALLY:
            if self.key.is_params:
                raise ValidationError(f"Tally on Params key {self.key}")
            count, amount = tally_fields(self.value)
            seen, total = (0, 0.0) if prior is None else tally_fields(prior, what=f"Prior value of {self.key}")
            total += amount
            if not math.isfinite(total):
                raise ValidationError(f"Non-finite tally for {self.key}")
            return TALLY_RECORD.pack(seen + count, total)
        raise ValidationError("Read ops do not produce values")


class TxnKind(Enum):
    UPDATE = "update"
    INFERENCE = "inference"


@dataclass(frozen=True)
class Transaction:
    """Atomic unit of state-access operations; txn_id and ts are assigned at admission."""

    kind: TxnKind
    ops: Tuple[StateOp, ...]
    txn_id: Optional[int] = None
    ts: Optional[int] = None
    # Snapshot epoch an update was derived from (staleness accounting)
    read_epoch: Optional[int] = None
    origin: str = "client"
    # Position of the work item that produced it in the replayed input
    input_seq: Optional[int] = None

    @classmethod
    def update(cls, ops: Sequence[StateOp], **kwargs) -> "Transaction":
        return cls(TxnKind.UPDATE, tuple(ops), **kwargs)

    @classmethod
    def inference(cls, keys: Sequence[ShardKey], **kwargs) -> "Transaction":
        return cls(TxnKind.INFERENCE, tuple(StateOp.read(key) for key in keys), **kwargs)

    @property
    def order_key(self) -> Tuple[int, int]:
        return (self.ts, self.txn_id)

    def keys(self) -> List[ShardKey]:
        return [op.key for op in self.ops]

    def validate(self) -> None:
        """Raise ValidationError unless kinds, ops, and keys are consistent."""
        if not self.ops:
            raise ValidationError("Transaction has no operations")
        if len(self.ops) > 0xFFFF:
            raise ValidationError("Transaction has too many operations")
        seen = set()
        for op in self.ops:
            if op.key in seen:
                raise ValidationError(f"Duplicate key {op.key} in transaction")
            seen.add(op.key)
            if self.kind is TxnKind.INFERENCE and op.kind is not OpKind.READ:
                raise ValidationError("Inference transactions may only contain Read ops")
            if self.kind is TxnKind.UPDATE and op.kind is OpKind.READ:
                raise ValidationError("Update transactions may only contain Write, Apply or Tally ops")

    def stamped(self, txn_id: int, ts: int) -> "Transaction":
        return replace(self, txn_id=txn_id, ts=ts)


class TxnStatus(Enum):
    COMMITTED = "committed"
    REJECTED = "rejected"


class RejectReason(Enum):
    VALIDATION = "validation"
    BACKPRESSURE = "backpressure"
    HALTED = "halted"


@dataclass(frozen=True)
class TxnOutcome:
    txn_id: Optional[int]
    kind: TxnKind
    ts: Optional[int]
    status: TxnStatus
    epoch_id: Optional[int] = None
    reason: Optional[RejectReason] = None
    detail: str = ""
    reads: Optional[Tuple[Tuple[ShardKey, Optional[ShardValue]], ...]] = None
    latency_ns: int = 0
    read_epoch: Optional[int] = None
    origin: str = "client"

    @property
    def committed(self) -> bool:
        return self.status is TxnStatus.COMMITTED

    def read_map(self) -> Dict[ShardKey, Optional[ShardValue]]:
        return dict(self.reads or ())

    def to_record(self) -> dict:
        """Flat record emitted to the metrics sink."""
        status = self.status.value if self.committed else f"rejected:{self.reason.value}"
        return {
            "txn_id": self.txn_id,
            "kind": self.kind.value,
            "ts": self.ts,
            "epoch": self.epoch_id,
            "status": status,
            "latency_ns": self.latency_ns,
        }


class ChainEntry(NamedTuple):
    ts: int
    txn_id: int
    op: StateOp


@dataclass
class EpochPlan:
    """Per-key operation chains for one sealed batch plus their executor assignment."""

    epoch_id: int
    transactions: Tuple[Transaction, ...]
    chains: Dict[ShardKey, List[ChainEntry]] = field(default_factory=dict)
    assignment: Dict[ShardKey, int] = field(default_factory=dict)

    def lanes(self) -> Dict[int, List[ShardKey]]:
        """Keys grouped by executor index, each group in key order."""
        grouped: Dict[int, List[ShardKey]] = {}
        for key in sorted(self.chains):
            grouped.setdefault(self.assignment[key], []).append(key)
        return grouped

    def __len__(self) -> int:
        return len(self.transactions)
