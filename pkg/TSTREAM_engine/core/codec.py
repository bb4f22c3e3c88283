#
# codec.py
# TStream-Engine-py
#
# Encodes and decodes keys, values, write-ahead log frames, and checkpoint dumps in little-endian binary.
#
# Thales Matheus Mendonça Santos - November 2025

"""Binary record codec.

WAL frame: ``[len u32][body][crc32c u32]`` where ``body`` is
``epoch u64, input cursor u64, txn count u32`` followed per transaction by
``txn_id u64, ts u64, op count u16`` and per op by
``namespace u8, name len u16, name, op kind u8, payload``. Params payloads
are ``dim u32`` plus ``dim`` f64 values; Meta payloads are ``len u32`` plus
bytes; Read ops carry no payload.

Checkpoint dump: ``MAGIC, epoch u64, count u32`` then key-ordered
``key, value`` pairs in the same encoding.
"""

import struct
from dataclasses import dataclass
from typing import Iterator, List, Optional, Tuple

import numpy as np
from crc32c import crc32c

from .errors import CorruptRecordError
from .keys import Namespace, ShardKey
from .transactions import OpKind, ShardValue, StateOp, Transaction, TxnKind

DUMP_MAGIC = b"TSDUMP01"

_U8 = struct.Struct("<B")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_RECORD_HEAD = struct.Struct("<QQI")
_TXN_HEAD = struct.Struct("<QQH")
_F64 = np.dtype("<f8")


@dataclass(frozen=True)
class WalRecord:
    """Committed transactions of one epoch, logged before the epoch becomes visible."""

    epoch_id: int
    transactions: Tuple[Transaction, ...]
    # Highest input position whose work is settled once this epoch is durable
    cursor: int = 0


# -- encoding ------------------------------------------------------------------------

def _encode_key(key: ShardKey, out: List[bytes]) -> None:
    out.append(_U8.pack(int(key.namespace)))
    out.append(_U16.pack(len(key.name)))
    out.append(key.name)


def _encode_value(key: ShardKey, value: ShardValue, out: List[bytes]) -> None:
    if key.is_params:
        vector = np.asarray(value, dtype=_F64)
        out.append(_U32.pack(vector.size))
        out.append(vector.tobytes())
    else:
        out.append(_U32.pack(len(value)))
        out.append(bytes(value))


def encode_transaction(txn: Transaction, out: List[bytes]) -> None:
    out.append(_TXN_HEAD.pack(txn.txn_id, txn.ts, len(txn.ops)))
    for op in txn.ops:
        _encode_key(op.key, out)
        out.append(_U8.pack(int(op.kind)))
        if op.kind is not OpKind.READ:
            _encode_value(op.key, op.value, out)


def encode_record_body(record: WalRecord) -> bytes:
    out: List[bytes] = [_RECORD_HEAD.pack(record.epoch_id, record.cursor, len(record.transactions))]
    for txn in record.transactions:
        encode_transaction(txn, out)
    return b"".join(out)


def encode_frame(record: WalRecord) -> bytes:
    body = encode_record_body(record)
    return _U32.pack(len(body)) + body + _U32.pack(crc32c(body))


def encode_listing(listing, epoch_id: int = 0) -> bytes:
    """Serialize a key-ordered dump listing."""
    out: List[bytes] = [DUMP_MAGIC, _U64.pack(epoch_id), _U32.pack(len(listing))]
    for key, value in listing:
        _encode_key(key, out)
        _encode_value(key, value, out)
    return b"".join(out)


# -- decoding ------------------------------------------------------------------------

class _Reader:
    __slots__ = ("data", "offset")

    def __init__(self, data: bytes, offset: int = 0):
        self.data = data
        self.offset = offset

    def take(self, size: int) -> bytes:
        end = self.offset + size
        if end > len(self.data):
            raise CorruptRecordError("Record truncated")
        chunk = self.data[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt: struct.Struct):
        return fmt.unpack(self.take(fmt.size))

    def key(self) -> ShardKey:
        (namespace,) = self.unpack(_U8)
        (length,) = self.unpack(_U16)
        try:
            return ShardKey(Namespace(namespace), self.take(length))
        except ValueError as exc:
            raise CorruptRecordError(f"Invalid key in record: {exc}") from exc

    def value(self, key: ShardKey) -> ShardValue:
        (size,) = self.unpack(_U32)
        if not key.is_params:
            return bytes(self.take(size))
        vector = np.frombuffer(self.take(size * _F64.itemsize), dtype=_F64).astype(np.float64)
        vector.setflags(write=False)
        return vector


def decode_record_body(body: bytes) -> WalRecord:
    reader = _Reader(body)
    epoch_id, cursor, count = reader.unpack(_RECORD_HEAD)
    transactions = []
    for _ in range(count):
        txn_id, ts, op_count = reader.unpack(_TXN_HEAD)
        ops = []
        for _ in range(op_count):
            key = reader.key()
            (kind_raw,) = reader.unpack(_U8)
            try:
                kind = OpKind(kind_raw)
            except ValueError as exc:
                raise CorruptRecordError(f"Unknown op kind {kind_raw}") from exc
            value = None if kind is OpKind.READ else reader.value(key)
            ops.append(StateOp(key, kind, value))
        txn_kind = TxnKind.INFERENCE if ops and all(op.kind is OpKind.READ for op in ops) else TxnKind.UPDATE
        transactions.append(Transaction(txn_kind, tuple(ops), txn_id=txn_id, ts=ts))
    if reader.offset != len(body):
        raise CorruptRecordError("Trailing bytes in record body")
    return WalRecord(epoch_id, tuple(transactions), cursor)


def decode_frame(data: bytes, offset: int = 0) -> Tuple[WalRecord, int]:
    """Decode the frame at ``offset``; returns the record and the next offset."""
    reader = _Reader(data, offset)
    (length,) = reader.unpack(_U32)
    body = reader.take(length)
    (expected,) = reader.unpack(_U32)
    if crc32c(body) != expected:
        raise CorruptRecordError(f"CRC mismatch at offset {offset}")
    return decode_record_body(body), reader.offset


def scan_frames(data: bytes) -> Tuple[List[Tuple[int, WalRecord]], int, Optional[str]]:
    """Decode consecutive frames until the data ends or a frame is torn/corrupt.

    Returns ``(records, valid_end, problem)``: each record paired with its start
    offset, the byte offset where the valid prefix ends, and a description of
    what stopped the scan (``None`` on a clean end).
    """
    records: List[Tuple[int, WalRecord]] = []
    offset = 0
    while offset < len(data):
        try:
            record, next_offset = decode_frame(data, offset)
        except CorruptRecordError as exc:
            return records, offset, str(exc)
        records.append((offset, record))
        offset = next_offset
    return records, offset, None


def iter_listing(data: bytes) -> Iterator[Tuple[ShardKey, ShardValue]]:
    reader = _Reader(data)
    if reader.take(len(DUMP_MAGIC)) != DUMP_MAGIC:
        raise CorruptRecordError("Not a checkpoint dump")
    reader.unpack(_U64)
    (count,) = reader.unpack(_U32)
    for _ in range(count):
        key = reader.key()
        yield key, reader.value(key)
    if reader.offset != len(data):
        raise CorruptRecordError("Trailing bytes in checkpoint dump")


def decode_listing(data: bytes) -> Tuple[int, list]:
    """Return ``(epoch_id, listing)`` from dump bytes."""
    epoch_id = _U64.unpack_from(data, len(DUMP_MAGIC))[0] if len(data) >= len(DUMP_MAGIC) + 8 else 0
    return epoch_id, list(iter_listing(data))


def checksum(data: bytes) -> int:
    return crc32c(data)
