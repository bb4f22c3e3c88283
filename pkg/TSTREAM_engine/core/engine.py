#
# engine.py
# TStream-Engine-py
#
# Wires the versioned store, transaction manager, durability, learners, and ingestion into one engine.
#
# Thales Matheus Mendonça Santos - November 2025

"""Engine assembly shared by the CLI tools, the harness, and the web interface.

:class:`Engine` owns one of each component. With a durability directory it
recovers whatever that directory holds before accepting work, cutting any
torn WAL tail so the log can be appended to again.

:class:`WorkDispatcher` turns ingest work items into transactions. It is
written against the manager's admission surface only, so
:func:`serial_replay` reuses it unchanged on top of :class:`~.oracle.SerialOracle`.
"""

import dataclasses
import itertools
import logging
import threading
from typing import Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from .codec import encode_listing
from .config import EngineConfig
from .durability import CrashInjector, DurabilityManager, RecoveryReport, recover
from .errors import StorageError
from .executors import ExecutorPool
from .keys import ShardKey
from .learner import (
    BIAS_KEY,
    LearnerStats,
    OnlineLearner,
    predict_from_reads,
    weight_key,
)
from .metrics import MetricsCollector, MetricsReport
from .oracle import SerialOracle
from .state_store import VersionedStore
from .stream_ingest import (
    InferenceReply,
    InferenceRequest,
    ReplyRouter,
    Sink,
    StreamEvent,
    StreamIngestor,
    WorkItem,
    counter_key,
    counter_transaction,
    to_inference,
)
from .transactions import ShardValue, TxnOutcome
from .txn_manager import TransactionManager

logger = logging.getLogger(__name__)


def _scalar(value: Optional[ShardValue]) -> Optional[float]:
    if value is None or isinstance(value, bytes):
        return None
    return float(value[0])


class WorkDispatcher:
    """Routes work items to the learners, the counter sink, or the inference path.

    Items are never refused: every one resolves to an outcome, a learner skip,
    or a resume skip, so the ingestor counts it as emitted.

    Each item gets a 1-based input position, stamped on the transaction it
    produces. Items at or below ``resume_cursor`` were settled by an earlier
    run and are only counted.
    """

    def __init__(self, manager, config: EngineConfig, *, replies: Optional[ReplyRouter] = None):
        self.manager = manager
        self.sink = config.pipeline.sink
        self.model = config.learner.model
        self.replies = replies or ReplyRouter()
        self.learners: List[OnlineLearner] = []
        if self.sink is Sink.LEARN:
            self.learners = [
                OnlineLearner(manager, self.model, retries=config.learner.retries, name=f"learner-{index}")
                for index in range(config.learner.learners)
            ]
        self._turn = itertools.count()
        self._lock = threading.Lock()
        self.resume_cursor = 0
        self.resume_skipped = 0
        # Serial replay of a prefix stops routing after this input position
        self.item_limit: Optional[int] = None
        self.items_routed = 0

    def restart(self, resume_cursor: int = 0) -> None:
        """Number the next input from 1, skipping positions up to ``resume_cursor``."""
        with self._lock:
            self.items_routed = 0
            self.resume_cursor = resume_cursor

    def __call__(self, item: WorkItem) -> bool:
        with self._lock:
            self.items_routed += 1
            seq = self.items_routed
            if seq <= self.resume_cursor or (self.item_limit is not None and seq > self.item_limit):
                self.resume_skipped += 1
                return True

        if isinstance(item, InferenceRequest):
            self.replies.deliver(self.answer(item))
        elif self.sink is Sink.COUNT:
            self.manager.admit(counter_transaction(item, input_seq=seq))
        else:
            self.learners[next(self._turn) % len(self.learners)].process(item, input_seq=seq)
        return True

    def answer(self, request: InferenceRequest) -> InferenceReply:
        """Serve ``request`` as a read-only transaction and build its reply."""
        outcome: TxnOutcome = self.manager.admit(to_inference(request, self.sink)).outcome()
        if not outcome.committed:
            return InferenceReply(request.request_id, request.channel_id, None, None)
        reads = outcome.read_map()
        features = request.feature_map()
        if self.sink is Sink.COUNT:
            values = tuple((name, _scalar(reads.get(counter_key(name)))) for name in features)
            return InferenceReply(request.request_id, request.channel_id, None, outcome.epoch_id, values)
        values = tuple((name, _scalar(reads.get(weight_key(name))) or 0.0) for name in features)
        values += (("bias", _scalar(reads.get(BIAS_KEY)) or 0.0),)
        prediction = predict_from_reads(reads, features, self.model)
        return InferenceReply(request.request_id, request.channel_id, prediction, outcome.epoch_id, values)

    def learner_stats(self) -> LearnerStats:
        total = LearnerStats()
        for learner in self.learners:
            stats = learner.stats
            total.submitted += stats.submitted
            total.skipped += stats.skipped
            total.dropped += stats.dropped
            total.retried += stats.retried
            total.losses.extend(stats.losses)
        return total


class Engine:
    """Transactional stream engine: ingest events, learn online, serve consistent reads."""

    def __init__(self, config: Optional[EngineConfig] = None, *, crash: Optional[CrashInjector] = None):
        self.config = config or EngineConfig()
        self.recovery: Optional[RecoveryReport] = None
        self.durability: Optional[DurabilityManager] = None

        first_txn_id = first_cursor = 0
        if self.config.durability.enabled:
            self.store, self.recovery = recover(self.config.durability.directory, self.config.store,
                                                truncate_tail=True)
            first_txn_id = self.recovery.last_txn_id
            first_cursor = self.recovery.cursor
            self.durability = DurabilityManager(self.config.durability, crash=crash,
                                                last_epoch=self.store.watermark,
                                                last_cursor=self.recovery.cursor)
            self.durability.attach(self.store)
        else:
            self.store = VersionedStore(self.config.store)

        self.pool = ExecutorPool(self.config.txn.executors)
        self.manager = TransactionManager(self.store, self.config.txn, durability=self.durability,
                                          pool=self.pool, first_txn_id=first_txn_id,
                                          first_cursor=first_cursor)
        self.metrics = MetricsCollector()
        self.manager.add_listener(self.metrics)

        self.replies = ReplyRouter()
        self.dispatcher = WorkDispatcher(self.manager, self.config, replies=self.replies)
        self.ingestor = StreamIngestor(self.config.pipeline, self.config.ingest, self.dispatcher)
        self._request_ids = itertools.count(1)
        self._closed = False

        if self.recovery is not None and self.store.watermark:
            logger.info("Engine resumed at epoch %d", self.store.watermark)

    # -- work ------------------------------------------------------------------------

    def ingest(self, event: StreamEvent) -> bool:
        return self.ingestor.ingest(event)

    def drain(self) -> None:
        """Process queued events, close open windows, and commit everything admitted."""
        self.ingestor.drain()
        self.ingestor.flush_windows()
        self.manager.flush()
        if self.durability is not None and not self.manager.halted:
            self.durability.wait()

    def replay(self, events: Iterable[StreamEvent], *, resume_from: int = 0) -> MetricsReport:
        """Feed ``events`` through the engine and report on the run.

        ``resume_from`` continues an interrupted replay of the same events:
        pass the recovered :attr:`RecoveryReport.cursor`. Work items up to that
        input position are counted as resume-skipped instead of admitted again.
        """
        self.dispatcher.restart(resume_from)
        self.manager.reset_cursor(resume_from)
        self.metrics.start()
        for event in events:
            self.ingestor.ingest(event)
        self.drain()
        self.metrics.stop()
        return self.report()

    def predict(self, features: Union[Mapping[str, float], Sequence[Tuple[str, float]]],
                channel_id: str = "api") -> InferenceReply:
        items = features.items() if isinstance(features, Mapping) else features
        request = InferenceRequest(tuple((str(name), float(value)) for name, value in items),
                                   channel_id, request_id=next(self._request_ids))
        return self.dispatcher.answer(request)

    # -- state -----------------------------------------------------------------------

    def state_at(self, key: ShardKey, epoch_id: Optional[int] = None) -> Tuple[int, Optional[ShardValue]]:
        """``(epoch, value)`` of ``key`` at the watermark, or at a retained past epoch."""
        snapshot = self.store.create_snapshot() if epoch_id is None else self.store.snapshot_at(epoch_id)
        with snapshot:
            return snapshot.epoch_id, snapshot.get(key)

    def dump(self) -> list:
        with self.store.create_snapshot() as snapshot:
            return self.store.dump(snapshot)

    def dump_bytes(self) -> bytes:
        return encode_listing(self.dump())

    def checkpoint(self):
        """Commit what is open and write a checkpoint now; returns the newest manifest."""
        if self.durability is None:
            raise StorageError("Engine has no durability directory")
        self.manager.flush()
        self.manager.checkpoint()
        self.durability.wait()
        manifests = self.durability.checkpoints.manifests()
        return manifests[0] if manifests else None

    def report(self) -> MetricsReport:
        recovery_ms = self.recovery.duration_ms if self.recovery is not None else None
        return MetricsReport.build(
            self.metrics,
            ingest=self.ingestor.stats(),
            learner_stats=self.dispatcher.learner_stats(),
            abandoned=self.replies.abandoned,
            resume_skipped=self.dispatcher.resume_skipped,
            epochs=self.manager.epochs_committed,
            busy_ns=self.pool.busy_ns(),
            watermark=self.store.watermark,
            recovery_ms=recovery_ms,
        )

    # -- lifecycle -------------------------------------------------------------------

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            self.ingestor.close()
            self.manager.close()
            if self.durability is not None and not self.manager.halted:
                self.durability.wait()
        finally:
            if self.durability is not None:
                self.durability.close()
            self.pool.close()

    def __enter__(self) -> "Engine":
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()


def serial_replay(events: Iterable[StreamEvent], config: Optional[EngineConfig] = None, *,
                  max_items: Optional[int] = None) -> Tuple[SerialOracle, WorkDispatcher]:
    """Run ``events`` through the same pipeline on the serial oracle.

    ``max_items`` stops after that many work items; with a recovered cursor it
    gives the reference state of an interrupted run.
    """
    config = config or EngineConfig()
    oracle = SerialOracle(config.txn.batch_size)
    dispatcher = WorkDispatcher(oracle, config)
    dispatcher.item_limit = max_items
    # Serial means one ingest path: worker lanes would reorder sources
    ingestor = StreamIngestor(config.pipeline, dataclasses.replace(config.ingest, workers=0), dispatcher)
    for event in events:
        ingestor.ingest(event)
    ingestor.flush_windows()
    oracle.flush()
    return oracle, dispatcher

