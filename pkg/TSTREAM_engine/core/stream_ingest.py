#
# stream_ingest.py
# TStream-Engine-py
#
# Runs events through filter, transform, and tumbling-window stages and emits training and inference work items.
#
# Thales Matheus Mendonça Santos - November 2025

"""Stream ingestion pipeline.

Events from each source pass through the configured stages in order and come
out as :class:`~.learner.TrainExample` or :class:`InferenceRequest` work
items, or are dropped with a counted reason. At every quiescent point::

    ingested == emitted + absorbed + sum(dropped) + in_flight

where ``absorbed`` counts events folded into a window output other than the
one the output itself stands for, and ``in_flight`` covers queued events and
events pending in an open window.
"""

import logging
import math
import operator
import queue
import threading
from collections import OrderedDict, deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import TYPE_CHECKING, Callable, Deque, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from .errors import ValidationError
from .keys import ShardKey, fnv1a64
from .learner import BIAS_KEY, Features, TrainExample, weight_key
from .transactions import StateOp, Transaction

if TYPE_CHECKING:
    from .config import IngestConfig

logger = logging.getLogger(__name__)


class EventKind(Enum):
    OBSERVATION = "obs"
    QUERY = "query"
    RAW = "raw"


class DropReason(Enum):
    FILTERED = "filtered"
    MALFORMED = "malformed"
    BACKPRESSURE = "backpressure"


def _as_features(features) -> Features:
    items = features.items() if isinstance(features, Mapping) else features
    return tuple((str(name), float(value)) for name, value in items)


@dataclass(frozen=True)
class StreamEvent:
    source_id: str
    event_ts: int
    kind: EventKind
    features: Features = ()
    label: Optional[float] = None
    payload: bytes = b""

    @classmethod
    def observation(cls, source_id: str, event_ts: int, features, label: Optional[float] = None) -> "StreamEvent":
        return cls(source_id, event_ts, EventKind.OBSERVATION, _as_features(features),
                   None if label is None else float(label))

    @classmethod
    def query(cls, source_id: str, event_ts: int, features) -> "StreamEvent":
        return cls(source_id, event_ts, EventKind.QUERY, _as_features(features))

    @classmethod
    def raw(cls, source_id: str, event_ts: int, payload: bytes) -> "StreamEvent":
        return cls(source_id, event_ts, EventKind.RAW, payload=bytes(payload))

    def feature_map(self) -> Dict[str, float]:
        return dict(self.features)


def decode_raw(event: StreamEvent) -> StreamEvent:
    """Turn a ``name=value;...[;label=y]`` payload into an Observation."""
    try:
        text = event.payload.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ValidationError(f"Raw payload is not UTF-8: {exc}") from exc
    features: List[Tuple[str, float]] = []
    label = None
    for part in filter(None, (chunk.strip() for chunk in text.split(";"))):
        name, sep, value = part.partition("=")
        if not sep or not name.strip():
            raise ValidationError(f"Raw payload field {part!r} is not name=value")
        try:
            number = float(value)
        except ValueError as exc:
            raise ValidationError(f"Raw payload value {value!r} is not a number") from exc
        if name.strip() == "label":
            label = number
        else:
            features.append((name.strip(), number))
    if not features:
        raise ValidationError("Raw payload carries no features")
    return StreamEvent(event.source_id, event.event_ts, EventKind.OBSERVATION, tuple(features), label)


def check_event(event: StreamEvent) -> None:
    """Raise ValidationError for events the pipeline cannot process."""
    if not isinstance(event.event_ts, int) or event.event_ts < 0:
        raise ValidationError("event_ts must be a non-negative integer")
    if not event.source_id:
        raise ValidationError("source_id must be non-empty")
    names = set()
    for name, value in event.features:
        if not name:
            raise ValidationError("Feature names must be non-empty")
        if name in names:
            raise ValidationError(f"Duplicate feature {name!r}")
        names.add(name)
        if not math.isfinite(value):
            raise ValidationError(f"Feature {name!r} is not finite")
    if event.label is not None and not math.isfinite(event.label):
        raise ValidationError("Label is not finite")


# -- stages ---------------------------------------------------------------------------

_COMPARATORS = {
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
    "==": operator.eq,
    "!=": operator.ne,
}
_PRESENCE = ("exists", "missing")


@dataclass(frozen=True)
class Condition:
    """Comparison of one field against a constant.

    ``field`` names a feature, or one of ``$label``, ``$event_ts``,
    ``$source``, ``$kind``.
    """

    field: str
    op: str
    value: Union[float, str, None] = None

    def __post_init__(self):
        if self.op not in _COMPARATORS and self.op not in _PRESENCE:
            raise ValidationError(f"Unknown filter operator {self.op!r}")
        if self.op in _COMPARATORS and self.value is None:
            raise ValidationError(f"Operator {self.op!r} needs a value")

    def _lookup(self, event: StreamEvent):
        if self.field == "$label":
            return event.label
        if self.field == "$event_ts":
            return event.event_ts
        if self.field == "$source":
            return event.source_id
        if self.field == "$kind":
            return event.kind.value
        return event.feature_map().get(self.field)

    def holds(self, event: StreamEvent) -> bool:
        actual = self._lookup(event)
        if self.op == "exists":
            return actual is not None
        if self.op == "missing":
            return actual is None
        if actual is None:
            return False
        try:
            return bool(_COMPARATORS[self.op](actual, self.value))
        except TypeError:
            return False

    def to_dict(self) -> dict:
        data = {"field": self.field, "op": self.op}
        if self.value is not None:
            data["value"] = self.value
        return data


@dataclass(frozen=True)
class FilterStage:
    conditions: Tuple[Condition, ...]
    match: str = "all"

    def __post_init__(self):
        if self.match not in ("all", "any"):
            raise ValidationError("Filter match must be 'all' or 'any'")

    def accepts(self, event: StreamEvent) -> bool:
        results = (condition.holds(event) for condition in self.conditions)
        return all(results) if self.match == "all" else any(results)

    def to_dict(self) -> dict:
        return {"type": "filter", "match": self.match, "where": [c.to_dict() for c in self.conditions]}


_DERIVATIONS: Dict[str, Callable[..., float]] = {
    "copy": lambda a: a,
    "neg": operator.neg,
    "abs": abs,
    "log1p": math.log1p,
    "add": operator.add,
    "sub": operator.sub,
    "mul": operator.mul,
    "div": operator.truediv,
}
_ARITY = {"copy": 1, "neg": 1, "abs": 1, "log1p": 1, "add": 2, "sub": 2, "mul": 2, "div": 2}


@dataclass(frozen=True)
class Derivation:
    """``target = op(args...)``; string args name features, numbers are constants."""

    target: str
    op: str
    args: Tuple[Union[str, float], ...]

    def __post_init__(self):
        if self.op not in _DERIVATIONS:
            raise ValidationError(f"Unknown transform op {self.op!r}")
        if len(self.args) != _ARITY[self.op]:
            raise ValidationError(f"Transform op {self.op!r} takes {_ARITY[self.op]} argument(s)")

    def evaluate(self, features: Mapping[str, float]) -> Optional[float]:
        values = []
        for arg in self.args:
            if isinstance(arg, str):
                if arg not in features:
                    return None
                values.append(features[arg])
            else:
                values.append(float(arg))
        try:
            return float(_DERIVATIONS[self.op](*values))
        except (ValueError, ZeroDivisionError, OverflowError) as exc:
            raise ValidationError(f"Transform {self.target} = {self.op}{tuple(self.args)} failed: {exc}") from exc

    def to_dict(self) -> dict:
        return {"target": self.target, "op": self.op, "args": list(self.args)}


@dataclass(frozen=True)
class TransformStage:
    """Renames, then derivations, then drops, then an optional keep-list."""

    rename: Tuple[Tuple[str, str], ...] = ()
    derive: Tuple[Derivation, ...] = ()
    drop: Tuple[str, ...] = ()
    keep: Optional[Tuple[str, ...]] = None

    def apply(self, event: StreamEvent) -> StreamEvent:
        renames = dict(self.rename)
        features: Dict[str, float] = {}
        for name, value in event.features:
            features[renames.get(name, name)] = value
        for derivation in self.derive:
            result = derivation.evaluate(features)
            if result is None:
                continue
            if not math.isfinite(result):
                raise ValidationError(f"Transform produced a non-finite {derivation.target}")
            features[derivation.target] = result
        for name in self.drop:
            features.pop(name, None)
        if self.keep is not None:
            features = {name: value for name, value in features.items() if name in self.keep}
        return replace(event, features=tuple(features.items()))

    def to_dict(self) -> dict:
        return {
            "type": "transform",
            "rename": dict(self.rename),
            "derive": [d.to_dict() for d in self.derive],
            "drop": list(self.drop),
            "keep": None if self.keep is None else list(self.keep),
        }


class Reducer(Enum):
    SUM = "sum"
    MEAN = "mean"
    COUNT = "count"
    LAST = "last"


class WindowUnit(Enum):
    EVENTS = "events"
    TIME = "time"


@dataclass(frozen=True)
class AggregateStage:
    size: int
    reducer: Reducer = Reducer.SUM
    unit: WindowUnit = WindowUnit.EVENTS

    def __post_init__(self):
        object.__setattr__(self, "reducer", Reducer(self.reducer))
        object.__setattr__(self, "unit", WindowUnit(self.unit))
        if self.size < 1:
            raise ValidationError("Window size must be >= 1")

    def to_dict(self) -> dict:
        return {"type": "aggregate", "size": self.size, "reducer": self.reducer.value, "unit": self.unit.value}


Stage = Union[FilterStage, TransformStage, AggregateStage]


class Sink(Enum):
    LEARN = "learn"
    COUNT = "count"


def _stage_from_dict(data: Mapping) -> Stage:
    kind = data.get("type")
    try:
        if kind == "filter":
            where = data.get("where", [])
            if isinstance(where, Mapping):
                where = [where]
            return FilterStage(tuple(Condition(**c) for c in where), data.get("match", "all"))
        if kind == "transform":
            keep = data.get("keep")
            return TransformStage(
                rename=tuple(dict(data.get("rename", {})).items()),
                derive=tuple(Derivation(d["target"], d["op"], tuple(d.get("args", ()))) for d in data.get("derive", [])),
                drop=tuple(data.get("drop", ())),
                keep=None if keep is None else tuple(keep),
            )
        if kind == "aggregate":
            return AggregateStage(int(data["size"]), data.get("reducer", "sum"), data.get("unit", "events"))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"Invalid {kind} stage: {exc}") from exc
    raise ValidationError(f"Unknown pipeline stage type {kind!r}")


@dataclass(frozen=True)
class PipelineSpec:
    stages: Tuple[Stage, ...] = ()
    sink: Sink = Sink.LEARN

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        try:
            object.__setattr__(self, "sink", Sink(self.sink))
        except ValueError as exc:
            raise ValidationError(f"Unknown sink {self.sink!r}") from exc
        if sum(isinstance(stage, AggregateStage) for stage in self.stages) > 1:
            raise ValidationError("A pipeline may contain at most one Aggregate stage")

    @property
    def aggregate(self) -> Optional[AggregateStage]:
        return next((stage for stage in self.stages if isinstance(stage, AggregateStage)), None)

    @classmethod
    def from_dict(cls, data: Mapping) -> "PipelineSpec":
        stages = tuple(_stage_from_dict(stage) for stage in data.get("stages", []))
        return cls(stages, data.get("sink", "learn"))

    def to_dict(self) -> dict:
        return {"sink": self.sink.value, "stages": [stage.to_dict() for stage in self.stages]}


# -- windows --------------------------------------------------------------------------

class TumblingWindow:
    """Open-window state of one Aggregate stage for one source."""

    def __init__(self, stage: AggregateStage):
        self.stage = stage
        self._members: List[StreamEvent] = []
        self._index: Optional[int] = None
        # Member count of the window closed by the most recent run_window call
        self.last_closed = 0

    @property
    def pending(self) -> int:
        return len(self._members)

    def _reduce(self, members: Sequence[StreamEvent]) -> StreamEvent:
        reducer = self.stage.reducer
        totals: Dict[str, float] = {}
        counts: Dict[str, int] = {}
        label = None
        for member in members:
            for name, value in member.features:
                if reducer is Reducer.LAST:
                    totals[name] = value
                else:
                    totals[name] = totals.get(name, 0.0) + value
                counts[name] = counts.get(name, 0) + 1
            if member.label is not None:
                label = member.label
        if reducer is Reducer.MEAN:
            totals = {name: totals[name] / counts[name] for name in totals}
        elif reducer is Reducer.COUNT:
            totals = {name: float(counts[name]) for name in totals}
        last = members[-1]
        return StreamEvent(last.source_id, last.event_ts, EventKind.OBSERVATION, tuple(totals.items()), label)

    def close(self) -> Optional[StreamEvent]:
        """Close the open window early; returns its output if it had members."""
        if not self._members:
            self.last_closed = 0
            return None
        members, self._members, self._index = self._members, [], None
        self.last_closed = len(members)
        return self._reduce(members)


def run_window(window: TumblingWindow, event: StreamEvent) -> Optional[StreamEvent]:
    """Feed ``event`` to ``window``; returns the aggregated output when a window closes."""
    window.last_closed = 0
    stage = window.stage
    if stage.unit is WindowUnit.EVENTS:
        window._members.append(event)
        if len(window._members) < stage.size:
            return None
        return window.close()

    index = event.event_ts // stage.size
    output = None
    if window._index is not None and index != window._index:
        output = window.close()
    window._members.append(event)
    window._index = index
    return output


# -- work items and replies -----------------------------------------------------------

@dataclass(frozen=True)
class InferenceRequest:
    features: Features
    channel_id: str
    event_ts: int = 0
    request_id: int = 0

    def feature_map(self) -> Dict[str, float]:
        return dict(self.features)


WorkItem = Union[TrainExample, InferenceRequest]


def counter_key(feature: str) -> ShardKey:
    return ShardKey.params(f"c:{feature}")


def counter_transaction(example: TrainExample, input_seq: Optional[int] = None) -> Transaction:
    """Counter sink: unlabeled observations add, labeled ones are absolute readings."""
    if example.label is None:
        ops = [StateOp.apply(counter_key(name), [value]) for name, value in example.features]
    else:
        ops = [StateOp.write(counter_key(name), [value]) for name, value in example.features]
    return Transaction.update(ops, origin="counter", input_seq=input_seq)


def to_inference(request: InferenceRequest, sink: Sink = Sink.LEARN) -> Transaction:
    """Read-only transaction answering ``request`` under the sink's key mapping."""
    if sink is Sink.COUNT:
        keys = [counter_key(name) for name, _ in request.features]
    else:
        keys = [weight_key(name) for name, _ in request.features] + [BIAS_KEY]
    return Transaction.inference(keys, origin=f"query:{request.channel_id}")


@dataclass(frozen=True)
class InferenceReply:
    request_id: int
    channel_id: str
    prediction: Optional[float]
    epoch_id: Optional[int]
    values: Tuple[Tuple[str, Optional[float]], ...] = ()

    def to_dict(self) -> dict:
        return {
            "request_id": self.request_id,
            "channel": self.channel_id,
            "prediction": self.prediction,
            "epoch": self.epoch_id,
            "values": dict(self.values),
        }


class ReplyChannel:
    """Bounded mailbox of replies for one channel id."""

    def __init__(self, channel_id: str, maxlen: int = 1024):
        self.channel_id = channel_id
        self.maxlen = maxlen
        self._replies: Deque[InferenceReply] = deque()
        self._lock = threading.Lock()
        self.closed = False

    def deliver(self, reply: InferenceReply) -> bool:
        with self._lock:
            if self.closed or len(self._replies) >= self.maxlen:
                return False
            self._replies.append(reply)
            return True

    def drain(self) -> List[InferenceReply]:
        with self._lock:
            replies = list(self._replies)
            self._replies.clear()
            return replies

    def close(self) -> None:
        with self._lock:
            self.closed = True


class ReplyRouter:
    """Channel registry; undeliverable replies count as abandoned."""

    def __init__(self, *, auto_open: bool = True, maxlen: int = 1024):
        self._channels: Dict[str, ReplyChannel] = {}
        self._lock = threading.Lock()
        self._auto_open = auto_open
        self._maxlen = maxlen
        self.abandoned = 0

    def open(self, channel_id: str) -> ReplyChannel:
        with self._lock:
            channel = self._channels.get(channel_id)
            if channel is None:
                channel = self._channels[channel_id] = ReplyChannel(channel_id, self._maxlen)
            return channel

    def get(self, channel_id: str) -> Optional[ReplyChannel]:
        with self._lock:
            return self._channels.get(channel_id)

    def deliver(self, reply: InferenceReply) -> bool:
        channel = self.open(reply.channel_id) if self._auto_open else self.get(reply.channel_id)
        if channel is not None and channel.deliver(reply):
            return True
        with self._lock:
            self.abandoned += 1
        logger.debug("Reply %d abandoned: channel %s closed or full", reply.request_id, reply.channel_id)
        return False


# -- ingestor -------------------------------------------------------------------------

@dataclass
class IngestStats:
    ingested: int = 0
    emitted: int = 0
    absorbed: int = 0
    queued: int = 0
    pending_windows: int = 0
    dropped: Dict[DropReason, int] = field(default_factory=lambda: {reason: 0 for reason in DropReason})

    @property
    def in_flight(self) -> int:
        return self.queued + self.pending_windows

    @property
    def dropped_total(self) -> int:
        return sum(self.dropped.values())

    def reconciles(self) -> bool:
        return self.ingested == self.emitted + self.absorbed + self.dropped_total + self.in_flight

    def to_dict(self) -> dict:
        return {
            "ingested": self.ingested,
            "emitted": self.emitted,
            "absorbed": self.absorbed,
            "in_flight": self.in_flight,
            "dropped": {reason.value: count for reason, count in self.dropped.items()},
        }


class _SourceState:
    __slots__ = ("lock", "last_ts", "window", "evicted")

    def __init__(self, stage: Optional[AggregateStage]):
        self.lock = threading.Lock()
        self.last_ts: Optional[int] = None
        self.window = TumblingWindow(stage) if stage is not None else None
        self.evicted = False

    
    def idle(self) -> bool:
        return self.window is None or self.window.pending == 0


class StreamIngestor:
    """Per-source ordered pipeline feeding a ``dispatch`` callable.

    ``dispatch(item)`` returns False when the downstream is saturated, which
    counts the item as dropped(backpressure). With ``workers > 0`` events go
    to bounded lanes, each source pinned to one lane.

    At most ``max_sources`` sources keep state; beyond that the least recently
    seen idle sources (no pending window members) are evicted, so event-time
    order is enforced per tracked source.
    """

    def __init__(self, spec: PipelineSpec, config: "IngestConfig", dispatch: Callable[[WorkItem], bool]):
        self.spec = spec
        self.config = config
        self._dispatch = dispatch
        self._stats = IngestStats()
        self._lock = threading.Lock()
        self._sources: "OrderedDict[str, _SourceState]" = OrderedDict()
        self._next_item_id = 0
        self._errors: List[BaseException] = []
        self._lanes: List["queue.Queue[Optional[StreamEvent]]"] = []
        self._threads: List[threading.Thread] = []
        for index in range(config.workers):
            lane: "queue.Queue[Optional[StreamEvent]]" = queue.Queue(maxsize=config.capacity)
            thread = threading.Thread(target=self._lane_loop, args=(lane,), name=f"tstream-ingest-{index}",
                                      daemon=True)
            self._lanes.append(lane)
            self._threads.append(thread)
            thread.start()

    # -- accounting --

    def stats(self) -> IngestStats:
        with self._lock:
            return replace(self._stats, dropped=dict(self._stats.dropped))

    def _drop(self, reason: DropReason, count: int = 1) -> bool:
        with self._lock:
            self._stats.dropped[reason] += count
        return False

    @property
    def tracked_sources(self) -> int:
        with self._lock:
            return len(self._sources)

    def _source(self, source_id: str) -> _SourceState:
        with self._lock:
            state = self._sources.get(source_id)
            if state is None:
                state = self._sources[source_id] = _SourceState(self.spec.aggregate)
                self._evict_idle(keep=source_id)
            else:
                self._sources.move_to_end(source_id)
            return state

    def _evict_idle(self, keep: Optional[str] = None) -> int:
        # Caller holds self._lock; busy sources are skipped, not waited on
        evicted = 0
        for source_id in list(self._sources):
            if len(self._sources) <= self.config.max_sources:
                break
            state = self._sources[source_id]
            if source_id == keep or not state.lock.acquire(blocking=False):
                continue
            try:
                if state.idle:
                    state.evicted = True
                    del self._sources[source_id]
                    evicted += 1
            finally:
                state.lock.release()
        if evicted:
            logger.debug("Evicted %d idle source(s)", evicted)
        return evicted

    # -- entry points --

    def ingest(self, event: StreamEvent) -> bool:
        """Accept ``event`` into the pipeline; returns False if it was dropped."""
        with self._lock:
            self._stats.ingested += 1
        if not self._lanes:
            return self._process(event)

        lane = self._lanes[fnv1a64(str(event.source_id).encode("utf-8")) % len(self._lanes)]
        with self._lock:
            self._stats.queued += 1
        try:
            lane.put(event, timeout=self.config.timeout_ms / 1000.0)
        except queue.Full:
            with self._lock:
                self._stats.queued -= 1
            logger.debug("Ingest lane full; dropping event from %s", event.source_id)
            return self._drop(DropReason.BACKPRESSURE)
        return True

    def _lane_loop(self, lane: "queue.Queue[Optional[StreamEvent]]") -> None:
        while True:
            event = lane.get()
            try:
                if event is None:
                    return
                with self._lock:
                    self._stats.queued -= 1
                self._process(event)
            except BaseException as exc:  # noqa: BLE001
                logger.error("Ingest worker failed: %s", exc)
                self._errors.append(exc)
            finally:
                lane.task_done()

    def _process(self, event: StreamEvent) -> bool:
        try:
            if event.kind is EventKind.RAW:
                event = decode_raw(event)
            check_event(event)
        except ValidationError as exc:
            logger.debug("Malformed event from %s: %s", event.source_id, exc)
            return self._drop(DropReason.MALFORMED)

        state = self._source(event.source_id)
        with state.lock:
            if state.evicted:
                return self._process(event)
            if state.last_ts is not None and event.event_ts < state.last_ts:
                return self._drop(DropReason.FILTERED)
            state.last_ts = event.event_ts
            return self._run_stages(event, state)

    def _run_stages(self, event: StreamEvent, state: _SourceState) -> bool:
        for stage in self.spec.stages:
            if isinstance(stage, FilterStage):
                if not stage.accepts(event):
                    return self._drop(DropReason.FILTERED)
            elif isinstance(stage, TransformStage):
                try:
                    event = stage.apply(event)
                except ValidationError as exc:
                    logger.debug("Transform failed for %s: %s", event.source_id, exc)
                    return self._drop(DropReason.MALFORMED)
            elif event.kind is EventKind.OBSERVATION:
                output = run_window(state.window, event)
                with self._lock:
                    self._stats.pending_windows += 1 - state.window.last_closed
                    if output is not None:
                        self._stats.absorbed += state.window.last_closed - 1
                if output is None:
                    return True
                event = output
        return self._emit(event)

    def _emit(self, event: StreamEvent) -> bool:
        with self._lock:
            self._next_item_id += 1
            item_id = self._next_item_id
        if event.kind is EventKind.QUERY:
            item: WorkItem = InferenceRequest(event.features, event.source_id, event.event_ts, item_id)
        else:
            item = TrainExample(event.features, event.label, event.event_ts, item_id)
        if not self._dispatch(item):
            return self._drop(DropReason.BACKPRESSURE)
        with self._lock:
            self._stats.emitted += 1
        return True

    def flush_windows(self) -> int:
        """Close every open window and emit its output; returns the number emitted."""
        emitted = 0
        with self._lock:
            states = list(self._sources.values())
        for state in states:
            if state.window is None:
                continue
            with state.lock:
                output = state.window.close()
                if output is None:
                    continue
                closed = state.window.last_closed
                with self._lock:
                    self._stats.pending_windows -= closed
                    self._stats.absorbed += closed - 1
                emitted += int(self._emit(output))
        with self._lock:
            self._evict_idle()
        return emitted

    def drain(self) -> None:
        """Wait until every queued event has been processed."""
        for lane in self._lanes:
            lane.join()
        if self._errors:
            raise self._errors[0]

    def close(self) -> None:
        for lane in self._lanes:
            lane.put(None)
        for thread in self._threads:
            thread.join()
        self._lanes.clear()
        self._threads.clear()
