#
# factories.py
# TStream-Engine-py
#
# Creates seeded synthetic workloads, Zipf-skewed key draws, and scenario event streams used in tests and demos.
#
# Thales Matheus Mendonça Santos - November 2025

"""Synthetic workload creation helpers used in tests, demos, and the harness."""

import math
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Dict, List, Mapping, Tuple

import numpy as np

from .errors import ValidationError
from .keys import ShardKey
from .learner import ModelKind, ModelSpec, TrainExample
from .stream_ingest import (
    AggregateStage,
    Condition,
    Derivation,
    FilterStage,
    PipelineSpec,
    Reducer,
    Sink,
    StreamEvent,
    TransformStage,
)
from .transactions import StateOp, Transaction


class Scenario(Enum):
    SYNTHETIC = "synthetic"
    HEALTHCARE = "healthcare"
    TRAFFIC = "traffic"
    SENTIMENT = "sentiment"


class ArrivalModel(Enum):
    CLOSED_LOOP = "closed"
    FIXED_RATE = "fixed-rate"


@dataclass(frozen=True)
class WorkloadSpec:
    events: int = 10_000
    keys: int = 64
    zipf: float = 0.0
    # Fraction of events that are observations (updates); the rest are queries
    mix: float = 0.9
    arrival: ArrivalModel = ArrivalModel.CLOSED_LOOP
    rate: float = 0.0
    seed: int = 42
    scenario: Scenario = Scenario.SYNTHETIC
    sources: int = 4

    def __post_init__(self):
        object.__setattr__(self, "arrival", ArrivalModel(self.arrival))
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        if self.events < 0:
            raise ValidationError("events must be >= 0")
        if self.keys < 1:
            raise ValidationError("keys must be >= 1")
        if not math.isfinite(self.zipf) or self.zipf < 0:
            raise ValidationError("zipf skew must be >= 0")
        if not 0.0 <= self.mix <= 1.0:
            raise ValidationError("mix must lie in [0, 1]")
        if self.arrival is ArrivalModel.FIXED_RATE and self.rate <= 0:
            raise ValidationError("fixed-rate arrival needs rate > 0")
        if self.sources < 1:
            raise ValidationError("sources must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must fit in 64 bits")

    @classmethod
    def for_scenario(cls, scenario, **overrides) -> "WorkloadSpec":
        """Scenario defaults (traffic is skewed) with explicit overrides applied."""
        scenario = Scenario(scenario)
        defaults: Dict[str, object] = {"scenario": scenario}
        if scenario is Scenario.TRAFFIC:
            defaults.update(zipf=0.9, mix=0.8)
        elif scenario is Scenario.HEALTHCARE:
            defaults.update(mix=0.85, sources=8)
        elif scenario is Scenario.SENTIMENT:
            defaults.update(keys=256, zipf=1.1)
        defaults.update({name: value for name, value in overrides.items() if value is not None})
        return cls(**defaults)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["arrival"] = self.arrival.value
        data["scenario"] = self.scenario.value
        return data

    @classmethod
    def from_dict(cls, data: Mapping) -> "WorkloadSpec":
        try:
            return cls(**dict(data))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"Invalid workload spec: {exc}") from exc


def zipf_probabilities(n: int, theta: float) -> np.ndarray:
    """Exact Zipf pmf over ranks 1..n (uniform when theta is 0)."""
    weights = 1.0 / np.arange(1, n + 1, dtype=np.float64) ** theta
    return weights / weights.sum()


def _helper1(x: float) -> float:
    # log1p(x) / x, stable near zero
    if abs(x) > 1e-8:
        return math.log1p(x) / x
    return 1.0 - x * (0.5 - x * (1.0 / 3.0 - 0.25 * x))


def _helper2(x: float) -> float:
    # expm1(x) / x, stable near zero
    if abs(x) > 1e-8:
        return math.expm1(x) / x
    return 1.0 + x * 0.5 * (1.0 + x * (1.0 / 3.0) * (1.0 + 0.25 * x))


class ZipfSampler:
    """Rejection-inversion sampler for Zipf ranks over ``0..n-1``."""

    def __init__(self, n: int, theta: float, rng: np.random.Generator):
        if n < 1:
            raise ValidationError("Zipf support must contain at least one key")
        self.n = n
        self.theta = theta
        self.rng = rng
        if theta > 0:
            self._h_integral_x1 = self._h_integral(1.5) - 1.0
            self._h_integral_n = self._h_integral(n + 0.5)
            self._s = 2.0 - self._h_integral_inverse(self._h_integral(2.5) - self._h(2.0))

    def _h(self, x: float) -> float:
        return math.exp(-self.theta * math.log(x))

    def _h_integral(self, x: float) -> float:
        log_x = math.log(x)
        return _helper2((1.0 - self.theta) * log_x) * log_x

    def _h_integral_inverse(self, x: float) -> float:
        t = max(x * (1.0 - self.theta), -1.0)
        return math.exp(_helper1(t) * x)

    def sample(self) -> int:
        if self.theta == 0:
            return int(self.rng.integers(self.n))
        while True:
            u = self._h_integral_n + self.rng.random() * (self._h_integral_x1 - self._h_integral_n)
            x = self._h_integral_inverse(u)
            k = min(max(int(x + 0.5), 1), self.n)
            if k - x <= self._s or u >= self._h_integral(k + 0.5) - self._h(k):
                return k - 1

    def distinct(self, count: int) -> List[int]:
        """``count`` distinct ranks (capped at n), in draw order."""
        count = min(count, self.n)
        seen: List[int] = []
        while len(seen) < count:
            rank = self.sample()
            if rank not in seen:
                seen.append(rank)
        return seen


# -- scenarios ------------------------------------------------------------------------

def scenario_pipeline(scenario) -> PipelineSpec:
    scenario = Scenario(scenario)
    if scenario is Scenario.SYNTHETIC:
        return PipelineSpec(sink=Sink.COUNT)
    if scenario is Scenario.TRAFFIC:
        return PipelineSpec((AggregateStage(4, Reducer.SUM),), sink=Sink.COUNT)
    if scenario is Scenario.HEALTHCARE:
        # Centre and scale vitals so one learning rate suits all three
        return PipelineSpec((
            FilterStage((Condition("hr", ">", 0.0), Condition("spo2", "exists"))),
            TransformStage(derive=(
                Derivation("hr_c", "sub", ("hr", 75.0)),
                Derivation("hr_n", "div", ("hr_c", 12.0)),
                Derivation("spo2_c", "sub", ("spo2", 96.0)),
                Derivation("spo2_n", "div", ("spo2_c", 2.5)),
                Derivation("temp_c", "sub", ("temp", 37.0)),
                Derivation("temp_n", "div", ("temp_c", 0.6)),
            ), keep=("hr_n", "spo2_n", "temp_n")),
        ), sink=Sink.LEARN)
    return PipelineSpec(sink=Sink.LEARN)


def scenario_model(scenario) -> ModelSpec:
    scenario = Scenario(scenario)
    if scenario is Scenario.SENTIMENT:
        return ModelSpec(ModelKind.LOGISTIC, learning_rate=0.05)
    return ModelSpec(ModelKind.LOGISTIC, learning_rate=0.1)


def _event_ts(spec: WorkloadSpec, index: int) -> int:
    if spec.arrival is ArrivalModel.FIXED_RATE:
        return int(index * 1_000_000 / spec.rate)
    return index


def _value(rng: np.random.Generator) -> float:
    # Three decimals keep traces readable; any finite float round-trips
    return float(np.round(rng.normal(), 3))


def _synthetic(spec: WorkloadSpec, rng: np.random.Generator) -> List[StreamEvent]:
    zipf = ZipfSampler(spec.keys, spec.zipf, rng)
    events = []
    for index in range(spec.events):
        source = f"s{index % spec.sources}"
        ts = _event_ts(spec, index)
        if rng.random() < spec.mix:
            ranks = zipf.distinct(int(rng.integers(1, 4)))
            features = [(f"k{rank}", _value(rng)) for rank in ranks]
            # Labeled observations become absolute writes on the counter sink
            label = 1.0 if rng.random() < 0.1 else None
            events.append(StreamEvent.observation(source, ts, features, label))
        else:
            ranks = zipf.distinct(int(rng.integers(1, 5)))
            events.append(StreamEvent.query(source, ts, [(f"k{rank}", 1.0) for rank in ranks]))
    return events


def _traffic(spec: WorkloadSpec, rng: np.random.Generator) -> List[StreamEvent]:
    zipf = ZipfSampler(spec.keys, spec.zipf, rng)
    query_share = 1.0 - spec.mix
    # Emergency burst: ten times the query rate for one second of event time
    burst_len = int(spec.rate) if spec.arrival is ArrivalModel.FIXED_RATE else max(spec.events // 10, 1)
    burst_start = spec.events // 2
    events = []
    for index in range(spec.events):
        source = f"sensor{index % spec.sources}"
        ts = _event_ts(spec, index)
        share = min(1.0, query_share * 10.0) if burst_start <= index < burst_start + burst_len else query_share
        if rng.random() >= share:
            events.append(StreamEvent.observation(source, ts, [(f"seg{zipf.sample()}", 1.0)]))
        else:
            ranks = zipf.distinct(int(rng.integers(2, 7)))
            events.append(StreamEvent.query(source, ts, [(f"seg{rank}", 1.0) for rank in ranks]))
    return events


def _healthcare(spec: WorkloadSpec, rng: np.random.Generator) -> List[StreamEvent]:
    events = []
    for index in range(spec.events):
        source = f"patient{index % spec.sources}"
        ts = _event_ts(spec, index)
        hr = float(np.round(rng.normal(75.0, 12.0), 1))
        spo2 = float(np.round(min(rng.normal(96.0, 2.5), 100.0), 1))
        temp = float(np.round(rng.normal(37.0, 0.6), 2))
        vitals = [("hr", hr), ("spo2", spo2), ("temp", temp)]
        if rng.random() < spec.mix:
            risk = 0.04 * (hr - 75.0) - 0.5 * (spo2 - 96.0) + 1.5 * (temp - 37.0) + rng.normal(0.0, 0.3)
            events.append(StreamEvent.observation(source, ts, vitals, 1.0 if risk > 0.8 else 0.0))
        else:
            events.append(StreamEvent.query(source, ts, vitals))
    return events


def _sentiment(spec: WorkloadSpec, rng: np.random.Generator) -> List[StreamEvent]:
    zipf = ZipfSampler(spec.keys, spec.zipf, rng)
    polarity = rng.normal(0.0, 1.0, size=spec.keys)
    events = []
    for index in range(spec.events):
        source = f"feed{index % spec.sources}"
        ts = _event_ts(spec, index)
        counts: Dict[int, float] = {}
        for _ in range(int(rng.integers(3, 9))):
            token = zipf.sample()
            counts[token] = counts.get(token, 0.0) + 1.0
        features = [(f"t{token}", count) for token, count in counts.items()]
        if rng.random() < spec.mix:
            score = sum(polarity[token] * count for token, count in counts.items())
            events.append(StreamEvent.observation(source, ts, features, 1.0 if score > 0 else 0.0))
        else:
            events.append(StreamEvent.query(source, ts, features))
    return events


_GENERATORS = {
    Scenario.SYNTHETIC: _synthetic,
    Scenario.TRAFFIC: _traffic,
    Scenario.HEALTHCARE: _healthcare,
    Scenario.SENTIMENT: _sentiment,
}


def generate_events(spec: WorkloadSpec) -> List[StreamEvent]:
    """Deterministic event stream for ``spec``: the same spec always yields the same events."""
    rng = np.random.default_rng(spec.seed)
    return _GENERATORS[spec.scenario](spec, rng)


# -- learner streams ------------------------------------------------------------------

def separable_examples(count: int, seed: int = 7, *, margin: float = 0.1) -> List[TrainExample]:
    """Linearly separable 2-feature stream: y = [2*x1 - x2 + 0.1 > 0], points near the boundary removed."""
    rng = np.random.default_rng(seed)
    examples: List[TrainExample] = []
    while len(examples) < count:
        x1, x2 = (float(v) for v in rng.uniform(-1.0, 1.0, size=2))
        score = 2.0 * x1 - x2 + 0.1
        if abs(score) < margin:
            continue
        examples.append(TrainExample((("x1", x1), ("x2", x2)), 1.0 if score > 0 else 0.0,
                                     event_ts=len(examples), example_id=len(examples) + 1))
    return examples


def separable_events(count: int, seed: int = 7, *, source: str = "stream") -> List[StreamEvent]:
    return [StreamEvent.observation(source, example.event_ts, example.features, example.label)
            for example in separable_examples(count, seed)]


def holdout_accuracy(score, examples: List[TrainExample], threshold: float = 0.5) -> float:
    """Share of ``examples`` whose ``score(features)`` lands on the labeled side of ``threshold``."""
    if not examples:
        return 0.0
    hits = sum((score(example.feature_map()) >= threshold) == (example.label >= 0.5) for example in examples)
    return hits / len(examples)


# -- raw transaction streams ----------------------------------------------------------

def random_transactions(count: int, *, keys: int = 64, zipf: float = 0.0, seed: int = 0,
                        write_fraction: float = 0.3, max_ops: int = 3,
                        dim: int = 1) -> List[Transaction]:
    """Unstamped update transactions mixing Apply and Write on Zipf-drawn Params keys."""
    rng = np.random.default_rng(seed)
    sampler = ZipfSampler(keys, zipf, rng)
    transactions = []
    for _ in range(count):
        ops = []
        for rank in sampler.distinct(int(rng.integers(1, max_ops + 1))):
            key = ShardKey.params(f"k{rank}")
            value = np.round(rng.normal(size=dim), 3)
            ops.append(StateOp.write(key, value) if rng.random() < write_fraction else StateOp.apply(key, value))
        transactions.append(Transaction.update(ops))
    return transactions


CONSTANT_SUM_KEYS: Tuple[ShardKey, ShardKey] = (ShardKey.params("acct:a"), ShardKey.params("acct:b"))


def constant_sum_transfers(count: int, *, total: float = 100.0, seed: int = 0) -> List[Transaction]:
    """Seed write plus transfers that keep sum(a) + sum(b) == total exactly.

    Amounts are multiples of 0.25 so every partial sum is exact in binary floating point.
    """
    rng = np.random.default_rng(seed)
    key_a, key_b = CONSTANT_SUM_KEYS
    transactions = [Transaction.update([StateOp.write(key_a, [total]), StateOp.write(key_b, [0.0])])]
    for _ in range(count):
        amount = float(rng.integers(-8, 9)) * 0.25
        transactions.append(Transaction.update([StateOp.apply(key_a, [-amount]), StateOp.apply(key_b, [amount])]))
    return transactions


def key_frequencies(events: List[StreamEvent], prefix: str = "k") -> Dict[str, int]:
    counts: Dict[str, int] = {}
    for event in events:
        for name, _ in event.features:
            if name.startswith(prefix):
                counts[name] = counts.get(name, 0) + 1
    return counts
