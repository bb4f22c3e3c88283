#
# learner.py
# TStream-Engine-py
#
# Runs the online linear/logistic learner that turns training examples into atomic update transactions.
#
# Thales Matheus Mendonça Santos - November 2025

"""Online learning as transactions.

The learner reads a committed snapshot, computes one SGD step for a
training example, and submits every resulting delta as a single update
transaction: one ``Apply`` per touched weight plus the bias, and one
``Tally`` of the example and its loss into the :class:`TrainingMeta` record.
The tally is resolved when the epoch executes, so only committed updates
are counted.

Key mapping: the weight of feature ``f`` lives at ``Params "w:<f>"`` and the
bias at ``Params "b"``, each a dim-1 vector. Absent weights read as zero.
"""

import logging
import math
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ValidationError
from .keys import ShardKey
from .transactions import TALLY_RECORD, RejectReason, StateOp, Transaction, tally_fields

logger = logging.getLogger(__name__)

BIAS_KEY = ShardKey.params("b")
TRAINING_META_KEY = ShardKey.meta("training_history")

Features = Tuple[Tuple[str, float], ...]


class ModelKind(Enum):
    LINEAR = "linear"
    LOGISTIC = "logistic"


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind = ModelKind.LOGISTIC
    learning_rate: float = 0.1
    l2: float = 0.0

    def __post_init__(self):
        if not isinstance(self.kind, ModelKind):
            try:
                object.__setattr__(self, "kind", ModelKind(self.kind))
            except ValueError as exc:
                raise ValidationError(f"Unknown model kind: {self.kind!r}") from exc
        if not math.isfinite(self.learning_rate) or self.learning_rate <= 0:
            raise ValidationError("learning_rate must be finite and > 0")
        if not math.isfinite(self.l2) or self.l2 < 0:
            raise ValidationError("l2 must be finite and >= 0")

    @classmethod
    def from_dict(cls, data: Mapping) -> "ModelSpec":
        try:
            return cls(**dict(data))
        except TypeError as exc:
            raise ValidationError(f"Invalid model spec: {exc}") from exc

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "learning_rate": self.learning_rate, "l2": self.l2}


def weight_key(feature: str) -> ShardKey:
    return ShardKey.params(f"w:{feature}")


@dataclass(frozen=True)
class TrainingMeta:
    """Learner bookkeeping stored under ``Meta "training_history"``."""

    examples_seen: int = 0
    cumulative_loss: float = 0.0

    def encode(self) -> bytes:
        return TALLY_RECORD.pack(self.examples_seen, self.cumulative_loss)

    @classmethod
    def decode(cls, data: Optional[bytes]) -> "TrainingMeta":
        if data is None:
            return cls()
        examples_seen, cumulative_loss = tally_fields(data, what="TrainingMeta record")
        return cls(examples_seen, cumulative_loss)


@dataclass(frozen=True)
class TrainExample:
    features: Features
    label: Optional[float]
    event_ts: int = 0
    example_id: int = 0

    def feature_map(self) -> Dict[str, float]:
        return dict(self.features)


@dataclass(frozen=True)
class UpdateIntent:
    deltas: Tuple[Tuple[ShardKey, np.ndarray], ...]
    example_id: int
    snapshot_epoch: int
    loss: float

    def keys(self) -> List[ShardKey]:
        return [key for key, _ in self.deltas]


def sigmoid(z: float) -> float:
    # Split on sign so exp never overflows
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def _scalar(value) -> float:
    return 0.0 if value is None else float(value[0])


def read_model(snapshot, features: Iterable[str]) -> Tuple[Dict[str, float], float]:
    """Weights for ``features`` and the bias visible at ``snapshot`` (absent as zero)."""
    weights = {name: _scalar(snapshot.get(weight_key(name))) for name in features}
    return weights, _scalar(snapshot.get(BIAS_KEY))


def margin(weights: Mapping[str, float], bias: float, features: Mapping[str, float]) -> float:
    return bias + sum(weights.get(name, 0.0) * value for name, value in features.items())


def score_from_margin(z: float, spec: ModelSpec) -> float:
    return sigmoid(z) if spec.kind is ModelKind.LOGISTIC else z


def predict(snapshot, features: Union[Mapping[str, float], Sequence[Tuple[str, float]]], spec: ModelSpec) -> float:
    features = dict(features)
    weights, bias = read_model(snapshot, features)
    return score_from_margin(margin(weights, bias, features), spec)


def predict_from_reads(reads: Mapping[ShardKey, Optional[np.ndarray]], features: Mapping[str, float],
                       spec: ModelSpec) -> float:
    """Score from the read results of an inference transaction."""
    weights = {name: _scalar(reads.get(weight_key(name))) for name in features}
    return score_from_margin(margin(weights, _scalar(reads.get(BIAS_KEY)), features), spec)


def objective(spec: ModelSpec, weights: Mapping[str, float], bias: float,
              features: Mapping[str, float], label: float) -> float:
    """Example loss plus the L2 penalty on the touched weights (bias unregularized)."""
    z = margin(weights, bias, features)
    if spec.kind is ModelKind.LINEAR:
        residual = z - label
        loss = 0.5 * residual * residual
    else:
        # log(1 + e^z) - y*z, written to stay finite for large |z|
        loss = max(z, 0.0) - z * label + math.log1p(math.exp(-abs(z)))
    penalty = 0.5 * spec.l2 * sum(weights.get(name, 0.0) * weights.get(name, 0.0) for name in features)
    return loss + penalty


def loss_and_gradient(spec: ModelSpec, weights: Mapping[str, float], bias: float,
                      features: Mapping[str, float], label: float) -> Tuple[float, Dict[str, float], float]:
    """Unregularized loss, per-feature gradients including the L2 term, and the bias gradient."""
    z = margin(weights, bias, features)
    if spec.kind is ModelKind.LINEAR:
        residual = z - label
        # float ** raises OverflowError where * yields inf
        loss = 0.5 * residual * residual
    else:
        residual = sigmoid(z) - label
        loss = max(z, 0.0) - z * label + math.log1p(math.exp(-abs(z)))
    gradients = {
        name: residual * value + spec.l2 * weights.get(name, 0.0)
        for name, value in features.items()
    }
    return loss, gradients, residual


def compute_update(snapshot, example: TrainExample, spec: ModelSpec) -> UpdateIntent:
    """One SGD step for ``example`` against ``snapshot``; raises ValidationError if unusable."""
    if example.label is None:
        raise ValidationError("Training example has no label")
    features = example.feature_map()
    weights, bias = read_model(snapshot, features)
    loss, gradients, bias_gradient = loss_and_gradient(spec, weights, bias, features, example.label)

    deltas = [(weight_key(name), -spec.learning_rate * gradients[name]) for name in sorted(features)]
    deltas.append((BIAS_KEY, -spec.learning_rate * bias_gradient))
    if not math.isfinite(loss) or not all(math.isfinite(delta) for _, delta in deltas):
        raise ValidationError(f"Non-finite update for example {example.example_id}")

    packed = []
    for key, delta in deltas:
        vector = np.array([delta], dtype=np.float64)
        vector.setflags(write=False)
        packed.append((key, vector))
    return UpdateIntent(tuple(packed), example.example_id, snapshot.epoch_id, loss)


def package_intent(intent: UpdateIntent, *, origin: str = "learner", input_seq: Optional[int] = None) -> Transaction:
    """Update transaction carrying every delta of ``intent`` plus the TrainingMeta tally."""
    ops = [StateOp.apply(key, delta) for key, delta in intent.deltas]
    ops.append(StateOp.tally(TRAINING_META_KEY, intent.loss))
    return Transaction.update(ops, read_epoch=intent.snapshot_epoch, origin=origin, input_seq=input_seq)


@dataclass
class LearnerStats:
    submitted: int = 0
    skipped: int = 0
    dropped: int = 0
    retried: int = 0
    losses: List[float] = field(default_factory=list)


class OnlineLearner:
    """Snapshot-read, gradient step, atomic submit.

    ``manager`` provides ``admit`` and ``create_snapshot``; both the
    transaction manager and the serial oracle do.
    """

    def __init__(self, manager, spec: ModelSpec, *, retries: int = 3, name: str = "learner-0",
                 retry_delay_s: float = 0.001):
        self.manager = manager
        self.spec = spec
        self.retries = retries
        self.name = name
        self.retry_delay_s = retry_delay_s
        self.stats = LearnerStats()
        self._stats_lock = threading.Lock()

    def process(self, example: TrainExample, input_seq: Optional[int] = None):
        """Train on ``example``; returns the admission ticket, or None if skipped or dropped."""
        snapshot = self.manager.create_snapshot()
        try:
            intent = compute_update(snapshot, example, self.spec)
        except ValidationError as exc:
            logger.debug("%s skipped example %d: %s", self.name, example.example_id, exc)
            with self._stats_lock:
                self.stats.skipped += 1
            return None
        finally:
            snapshot.release()
        return self.submit_update(intent, input_seq)

    def submit_update(self, intent: UpdateIntent, input_seq: Optional[int] = None):
        txn = package_intent(intent, origin=self.name, input_seq=input_seq)
        for attempt in range(self.retries + 1):
            ticket = self.manager.admit(txn)
            if not ticket.rejected_with(RejectReason.BACKPRESSURE):
                with self._stats_lock:
                    self.stats.submitted += 1
                    self.stats.losses.append(intent.loss)
                return ticket
            if attempt < self.retries:
                with self._stats_lock:
                    self.stats.retried += 1
                time.sleep(self.retry_delay_s * (attempt + 1))

        logger.debug("%s dropped example %d after %d retries", self.name, intent.example_id, self.retries)
        with self._stats_lock:
            self.stats.dropped += 1
        return None
