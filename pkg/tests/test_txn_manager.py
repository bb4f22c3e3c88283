#
# test_txn_manager.py
# TStream-Engine-py
#
# Verifies admission, epoch sealing, chain execution, atomic rejection, and serial equivalence of the transaction manager.
#
# Thales Matheus Mendonça Santos - November 2025

import threading
import time

import pytest

from TSTREAM_engine.core.codec import encode_listing
from TSTREAM_engine.core.config import StoreConfig, TxnConfig
from TSTREAM_engine.core.errors import EngineHalted, StorageError, ValidationError
from TSTREAM_engine.core.factories import CONSTANT_SUM_KEYS, constant_sum_transfers, random_transactions
from TSTREAM_engine.core.keys import ShardKey
from TSTREAM_engine.core.oracle import run_serial
from TSTREAM_engine.core.state_store import VersionedStore
from TSTREAM_engine.core.transactions import TALLY_RECORD, RejectReason, StateOp, Transaction, TxnKind
from TSTREAM_engine.core.txn_manager import TransactionManager

A = ShardKey.params("a")
B = ShardKey.params("b")
K = ShardKey.params("k")


def _stamped(txn_id, *ops):
    return Transaction.update(ops).stamped(txn_id, txn_id)


def _engine_dump(transactions, executors, batch_size=32):
    store = VersionedStore(StoreConfig(partitions=8))
    with TransactionManager(store, TxnConfig(executors=executors, batch_size=batch_size)) as manager:
        for txn in transactions:
            manager.admit(txn)
        manager.flush()
        with store.create_snapshot() as snapshot:
            return encode_listing(store.dump(snapshot))


def test_admission_timestamps_increase(manager):
    # Sequential admits get strictly increasing ts and txn ids
    first = manager.admit(Transaction.update([StateOp.apply(K, [1.0])]))
    second = manager.admit(Transaction.inference([K]))
    assert second.ts > first.ts
    assert second.txn_id > first.txn_id


def test_malformed_transactions_are_rejected(manager):
    # Kind/op mismatches and duplicate keys resolve as Rejected(validation) right away
    bad = [
        Transaction(TxnKind.UPDATE, (StateOp.read(K),)),
        Transaction(TxnKind.INFERENCE, (StateOp.apply(K, [1.0]),)),
        Transaction.update([StateOp.apply(K, [1.0]), StateOp.write(K, [2.0])]),
        Transaction.update([]),
    ]
    for txn in bad:
        ticket = manager.admit(txn)
        assert ticket.done()
        outcome = ticket.outcome()
        assert not outcome.committed
        assert outcome.reason is RejectReason.VALIDATION


def test_inference_reads_committed_watermark(manager):
    # Inference sees the last committed epoch and never the open batch
    for value in (1.0, 2.0, 3.0, 4.0):
        manager.admit(Transaction.update([StateOp.apply(K, [value])]))
    assert manager.watermark == 1
    manager.admit(Transaction.update([StateOp.apply(K, [100.0])]))

    outcome = manager.admit(Transaction.inference([K, A])).outcome()
    assert outcome.committed
    assert outcome.epoch_id == 1
    reads = outcome.read_map()
    assert reads[K].tolist() == [10.0]
    assert reads[A] is None


def test_seal_epoch_builds_per_key_chains():
    # T1:{a,b}, T2:{a}, T3:{b} gives chains a:[T1,T2] and b:[T1,T3]
    store = VersionedStore(StoreConfig(partitions=4))
    with TransactionManager(store, TxnConfig(executors=4)) as manager:
        t1 = _stamped(1, StateOp.apply(A, [1.0]), StateOp.apply(B, [1.0]))
        t2 = _stamped(2, StateOp.apply(A, [1.0]))
        t3 = _stamped(3, StateOp.apply(B, [1.0]))
        plan = manager.seal_epoch([t3, t1, t2])

        assert plan.epoch_id == 1
        assert [entry.txn_id for entry in plan.chains[A]] == [1, 2]
        assert [entry.txn_id for entry in plan.chains[B]] == [1, 3]
        for key, lane in plan.assignment.items():
            assert lane == store.partition_of(key) % 4
        assert manager.seal_epoch([]) is None


def test_execute_epoch_folds_deltas_in_order():
    # k = [1, 2]; Apply [0.5, -1] then Apply [0.5, 0] commits [2, 1]
    store = VersionedStore()
    store.install_version(K, [1.0, 2.0], 1)
    store.advance_watermark(1)
    with TransactionManager(store, TxnConfig(executors=2)) as manager:
        plan = manager.seal_epoch([
            _stamped(1, StateOp.apply(K, [0.5, -1.0])),
            _stamped(2, StateOp.apply(K, [0.5, 0.0])),
        ])
        outcomes = manager.execute_epoch(plan)

    assert all(outcome.committed and outcome.epoch_id == 2 for outcome in outcomes)
    assert store.watermark == 2
    assert store.read_committed(K).tolist() == [2.0, 1.0]


def test_write_and_apply_follow_timestamp_order():
    # Write [9] then Apply [1] gives [10]; the reverse order gives [9]
    results = []
    for ops in ((StateOp.write(K, [9.0]), StateOp.apply(K, [1.0])),
                (StateOp.apply(K, [1.0]), StateOp.write(K, [9.0]))):
        store = VersionedStore()
        with TransactionManager(store, TxnConfig(executors=2)) as manager:
            # Seal input order is irrelevant; (ts, txn_id) decides
            manager.execute_epoch(manager.seal_epoch([_stamped(2, ops[1]), _stamped(1, ops[0])]))
        results.append(store.read_committed(K).tolist())
    assert results == [[10.0], [9.0]]


def test_rejected_transaction_is_excised_atomically(manager):
    # T2 fails on b, so none of its ops reach a either; T1 and T3 still commit
    t1 = manager.admit(Transaction.update([StateOp.apply(A, [1.0]), StateOp.apply(B, [1.0])]))
    t2 = manager.admit(Transaction.update([StateOp.apply(A, [1.0]), StateOp.apply(B, [1.0, 2.0])]))
    t3 = manager.admit(Transaction.update([StateOp.apply(A, [1.0])]))
    t4 = manager.admit(Transaction.update([StateOp.write(K, [1e308]), StateOp.apply(A, [5.0])]))
    t5 = manager.admit(Transaction.update([StateOp.apply(K, [1e308])]))
    manager.flush()

    assert t1.outcome().committed and t3.outcome().committed and t4.outcome().committed
    assert t2.outcome().reason is RejectReason.VALIDATION
    assert t5.outcome().reason is RejectReason.VALIDATION
    assert manager.store.read_committed(A).tolist() == [7.0]
    assert manager.store.read_committed(B).tolist() == [1.0]
    assert manager.store.read_committed(K).tolist() == [1e308]


@pytest.mark.parametrize("zipf", [0.0, 0.8, 0.99])
def test_serial_equivalence_across_executor_counts(zipf):
    # Dumps under E = 1, 2, 4, 8 are byte-identical to the serial oracle
    transactions = random_transactions(400, keys=64, zipf=zipf, seed=int(zipf * 100))
    # A dimension mismatch in the middle must be excised the same way everywhere
    transactions.insert(150, Transaction.update([StateOp.apply(ShardKey.params("k0"), [1.0, 1.0]),
                                                 StateOp.apply(ShardKey.params("k1"), [1.0])]))
    expected = run_serial(transactions, batch_size=32).dump_bytes()
    for executors in (1, 2, 4, 8):
        assert _engine_dump(transactions, executors) == expected


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(10))
def test_serial_equivalence_full_scale(seed):
    # 1,000 mixed Write/Apply txns per seed match the oracle under every executor count
    transactions = random_transactions(1000, keys=64, zipf=0.99, seed=100 + seed, dim=2)
    expected = run_serial(transactions, batch_size=32).dump_bytes()
    for executors in (1, 2, 4, 8):
        assert _engine_dump(transactions, executors) == expected


def test_watermark_advances_once_per_epoch(manager):
    # 12 updates with B=4 form exactly three epochs
    tickets = [manager.admit(Transaction.update([StateOp.apply(K, [1.0])])) for _ in range(12)]
    assert manager.watermark == 3
    assert manager.epochs_committed == 3
    assert manager.epoch_sizes == [4, 4, 4]
    assert sorted({ticket.outcome().epoch_id for ticket in tickets}) == [1, 2, 3]


def test_every_admitted_transaction_gets_one_outcome(manager):
    # Listeners see exactly one outcome per admitted transaction
    seen = []
    manager.add_listener(seen.append)
    tickets = [manager.admit(txn) for txn in random_transactions(30, keys=8, seed=3)]
    tickets.append(manager.admit(Transaction.inference([K])))
    tickets.append(manager.admit(Transaction(TxnKind.UPDATE, (StateOp.read(K),))))
    manager.flush()

    assert all(ticket.done() for ticket in tickets)
    assert len(seen) == manager.admitted == len(tickets)
    assert len({outcome.txn_id for outcome in seen}) == len(seen)
    record = seen[0].to_record()
    assert set(record) == {"txn_id", "kind", "ts", "epoch", "status", "latency_ns"}


def test_constant_sum_reads_never_mix_epochs():
    # Readers racing commits always see a + b == 100 (or nothing before the first epoch)
    store = VersionedStore(StoreConfig(partitions=4))
    violations = []
    stop = threading.Event()
    with TransactionManager(store, TxnConfig(executors=4, batch_size=8)) as manager:
        def reader():
            while not stop.is_set():
                reads = manager.admit(Transaction.inference(CONSTANT_SUM_KEYS)).outcome().read_map()
                values = [reads[key] for key in CONSTANT_SUM_KEYS]
                if values == [None, None]:
                    continue
                if None in values or values[0][0] + values[1][0] != 100.0:
                    violations.append(values)

        threads = [threading.Thread(target=reader) for _ in range(8)]
        for thread in threads:
            thread.start()
        for txn in constant_sum_transfers(3000, seed=9):
            manager.admit(txn)
        manager.flush()
        stop.set()
        for thread in threads:
            thread.join()

    assert violations == []
    assert store.watermark > 1


def test_live_mode_seals_on_timeout():
    # A partial batch commits once the batch timeout expires
    store = VersionedStore()
    with TransactionManager(store, TxnConfig(executors=2, batch_size=256, batch_timeout_ms=5.0,
                                             auto_seal=True)) as manager:
        tickets = [manager.admit(Transaction.update([StateOp.apply(K, [1.0])])) for _ in range(3)]
        outcomes = [ticket.outcome(timeout=5.0) for ticket in tickets]
    assert all(outcome.committed for outcome in outcomes)
    assert store.read_committed(K).tolist() == [3.0]


class _FailingLog:
    def append_epoch(self, record):
        raise StorageError("disk full")

    def after_commit(self, epoch_id):
        raise AssertionError("epoch must not become visible")


def test_storage_failure_halts_the_manager():
    # A failed WAL append rejects the epoch and refuses further work
    store = VersionedStore()
    manager = TransactionManager(store, TxnConfig(executors=1, batch_size=1), durability=_FailingLog())
    ticket = manager.admit(Transaction.update([StateOp.apply(K, [1.0])]))

    assert ticket.outcome().reason is RejectReason.HALTED
    assert manager.halted
    assert store.watermark == 0
    with pytest.raises(EngineHalted):
        manager.admit(Transaction.inference([K]))
    manager.close()


def test_tally_accumulates_in_chain_order(manager):
    # Tally ops add (count, amount) to the running record; an excised txn adds nothing
    meta = ShardKey.meta("tally")
    manager.admit(Transaction.update([StateOp.tally(meta, 0.5)]))
    manager.admit(Transaction.update([StateOp.apply(K, [1.0])]))
    manager.admit(Transaction.update([StateOp.tally(meta, 1.0), StateOp.apply(K, [1.0, 1.0])]))
    manager.admit(Transaction.update([StateOp.tally(meta, 0.25, count=2)]))
    manager.flush()

    assert TALLY_RECORD.unpack(manager.store.read_committed(meta)) == (3, 0.75)


def test_tally_rejects_bad_targets():
    # Params keys, negative counts, non-finite amounts and malformed priors are refused
    meta = ShardKey.meta("tally")
    with pytest.raises(ValidationError):
        StateOp.tally(K, 1.0)
    with pytest.raises(ValidationError):
        StateOp.tally(meta, 1.0, count=-1)
    with pytest.raises(ValidationError):
        StateOp.tally(meta, float("inf"))
    with pytest.raises(ValidationError):
        StateOp.tally(meta, 1.0).evaluate(b"short")
    with pytest.raises(ValidationError):
        StateOp.tally(meta, 1e308).evaluate(TALLY_RECORD.pack(1, 1e308))


class _SlowLog:
    def __init__(self, delay_s):
        self.delay_s = delay_s
        self.appending = threading.Event()

    def append_epoch(self, record):
        self.appending.set()
        time.sleep(self.delay_s)

    def after_commit(self, epoch_id):
        pass


def test_inference_does_not_wait_on_a_slow_commit():
    # A read admitted while an epoch sits in a 1 s WAL append returns at once from the prior epoch
    store = VersionedStore()
    log = _SlowLog(1.0)
    manager = TransactionManager(store, TxnConfig(executors=1, batch_size=1), durability=log)
    writer = threading.Thread(target=manager.admit, args=(Transaction.update([StateOp.apply(K, [1.0])]),))
    writer.start()
    assert log.appending.wait(5.0)

    started = time.perf_counter()
    outcome = manager.admit(Transaction.inference([K])).outcome(timeout=5.0)
    elapsed = time.perf_counter() - started
    writer.join()
    manager.close()

    assert elapsed < 0.5
    assert outcome.committed
    assert outcome.epoch_id == 0
    assert outcome.read_map()[K] is None
    assert store.read_committed(K).tolist() == [1.0]
