#
# metrics.py
# TStream-Engine-py
#
# Collects per-transaction outcome records and renders run reports as JSON, CSV, or aligned text.
#
# Thales Matheus Mendonça Santos - November 2025

"""Run metrics and reports."""

import csv
import io
import json
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .transactions import TxnKind, TxnOutcome

REPORT_FORMATS = ("json", "csv", "text")


def latency_percentiles(latencies_ns: Sequence[int]) -> Dict[str, float]:
    """p50/p95/p99 and mean of the recorded latencies (zeros when none were recorded)."""
    values = np.asarray(latencies_ns, dtype=np.float64)
    if values.size == 0:
        return {"p50": 0.0, "p95": 0.0, "p99": 0.0, "mean": 0.0}
    return {
        "p50": float(np.percentile(values, 50)),
        "p95": float(np.percentile(values, 95)),
        "p99": float(np.percentile(values, 99)),
        "mean": float(np.mean(values)),
    }


class MetricsCollector:
    """Outcome listener; every counter is updated under one lock."""

    def __init__(self):
        self._lock = threading.Lock()
        self.records: List[dict] = []
        self.keep_records = False
        self.committed = 0
        self.rejected: Counter = Counter()
        self.by_kind: Counter = Counter()
        self.latencies_ns: List[int] = []
        self.staleness: Counter = Counter()
        self._started = time.perf_counter()
        self._stopped: Optional[float] = None

    def __call__(self, outcome: TxnOutcome) -> None:
        with self._lock:
            if self.keep_records:
                self.records.append(outcome.to_record())
            self.by_kind[outcome.kind.value] += 1
            self.latencies_ns.append(outcome.latency_ns)
            if outcome.committed:
                self.committed += 1
                if outcome.kind is TxnKind.UPDATE and outcome.read_epoch is not None:
                    self.staleness[outcome.epoch_id - outcome.read_epoch] += 1
            else:
                self.rejected[outcome.reason.value] += 1

    def start(self) -> None:
        self._started = time.perf_counter()
        self._stopped = None

    def stop(self) -> None:
        self._stopped = time.perf_counter()

    @property
    def wall_s(self) -> float:
        end = self._stopped if self._stopped is not None else time.perf_counter()
        return max(end - self._started, 1e-9)

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "committed": self.committed,
                "rejected": dict(self.rejected),
                "by_kind": dict(self.by_kind),
                "latencies_ns": list(self.latencies_ns),
                "staleness": dict(self.staleness),
            }


@dataclass
class MetricsReport:
    committed: int = 0
    rejected: Dict[str, int] = field(default_factory=dict)
    dropped: Dict[str, int] = field(default_factory=dict)
    ingested: int = 0
    emitted: int = 0
    absorbed: int = 0
    in_flight: int = 0
    abandoned: int = 0
    learner_skipped: int = 0
    learner_retried: int = 0
    resume_skipped: int = 0
    updates: int = 0
    inferences: int = 0
    epochs: int = 0
    wall_s: float = 0.0
    throughput_tps: float = 0.0
    latency_ns: Dict[str, float] = field(default_factory=dict)
    staleness: Dict[int, int] = field(default_factory=dict)
    busy_fraction: List[float] = field(default_factory=list)
    watermark: int = 0
    recovery_ms: Optional[float] = None

    @property
    def rejected_total(self) -> int:
        return sum(self.rejected.values())

    @property
    def dropped_total(self) -> int:
        return sum(self.dropped.values())

    def reconciles(self) -> bool:
        """Every ingested event ends up committed, rejected, dropped, absorbed, skipped, or in flight."""
        outcomes = self.committed + self.rejected_total - self.learner_retried
        ingest_ok = self.ingested == self.emitted + self.absorbed + self.dropped_total + self.in_flight
        return ingest_ok and self.emitted == outcomes + self.learner_skipped + self.resume_skipped

    @classmethod
    def build(cls, collector: MetricsCollector, *, ingest=None, learner_stats=None, abandoned: int = 0,
              resume_skipped: int = 0,
              epochs: int = 0, busy_ns: Sequence[int] = (), watermark: int = 0,
              recovery_ms: Optional[float] = None) -> "MetricsReport":
        data = collector.snapshot()
        wall_s = collector.wall_s
        committed = data["committed"]
        report = cls(
            committed=committed,
            rejected=data["rejected"],
            updates=data["by_kind"].get(TxnKind.UPDATE.value, 0),
            inferences=data["by_kind"].get(TxnKind.INFERENCE.value, 0),
            abandoned=abandoned,
            resume_skipped=resume_skipped,
            epochs=epochs,
            wall_s=wall_s,
            throughput_tps=committed / wall_s,
            latency_ns=latency_percentiles(data["latencies_ns"]),
            staleness=dict(sorted(data["staleness"].items())),
            busy_fraction=[min(ns / 1e9 / wall_s, 1.0) for ns in busy_ns],
            watermark=watermark,
            recovery_ms=recovery_ms,
        )
        if ingest is not None:
            report.ingested = ingest.ingested
            report.emitted = ingest.emitted
            report.absorbed = ingest.absorbed
            report.in_flight = ingest.in_flight
            report.dropped = {reason.value: count for reason, count in ingest.dropped.items()}
        if learner_stats is not None:
            report.learner_skipped = learner_stats.skipped
            report.learner_retried = learner_stats.retried
        return report

    def to_dict(self) -> dict:
        return {
            "committed": self.committed,
            "rejected": dict(self.rejected),
            "rejected_total": self.rejected_total,
            "dropped": dict(self.dropped),
            "dropped_total": self.dropped_total,
            "ingested": self.ingested,
            "emitted": self.emitted,
            "absorbed": self.absorbed,
            "in_flight": self.in_flight,
            "abandoned": self.abandoned,
            "learner_skipped": self.learner_skipped,
            "learner_retried": self.learner_retried,
            "resume_skipped": self.resume_skipped,
            "updates": self.updates,
            "inferences": self.inferences,
            "epochs": self.epochs,
            "watermark": self.watermark,
            "wall_s": round(self.wall_s, 6),
            "throughput_tps": round(self.throughput_tps, 3),
            "latency_ns": {name: round(value, 1) for name, value in self.latency_ns.items()},
            "staleness": {str(lag): count for lag, count in self.staleness.items()},
            "busy_fraction": [round(value, 4) for value in self.busy_fraction],
            "recovery_ms": None if self.recovery_ms is None else round(self.recovery_ms, 3),
            "reconciled": self.reconciles(),
        }

    def _scalars(self) -> List[tuple]:
        rows = []
        for name, value in self.to_dict().items():
            if isinstance(value, dict):
                rows.extend((f"{name}.{sub}", sub_value) for sub, sub_value in value.items())
            elif isinstance(value, list):
                rows.extend((f"{name}.{index}", item) for index, item in enumerate(value))
            else:
                rows.append((name, value))
        return rows

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["metric", "value"])
        writer.writerows(self._scalars())
        return buffer.getvalue()

    def to_text(self) -> str:
        rows = self._scalars()
        width = max((len(name) for name, _ in rows), default=0)
        return "\n".join(f"{name:<{width}}  {'-' if value is None else value}" for name, value in rows) + "\n"

    def render(self, fmt: str = "json") -> str:
        if fmt == "json":
            return self.to_json()
        if fmt == "csv":
            return self.to_csv()
        if fmt == "text":
            return self.to_text()
        raise ValueError(f"Unknown report format {fmt!r}; expected one of {REPORT_FORMATS}")

    def write(self, path: Union[str, Path], fmt: str = "json") -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.render(fmt), encoding="utf-8")
        return path

