#
# config.py
# TStream-Engine-py
#
# Collects engine configuration dataclasses, JSON loading, and logging setup driven by TSTREAM_LOG.
#
# Thales Matheus Mendonça Santos - November 2025

"""Engine configuration and logging setup."""

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

from .errors import ValidationError
from .learner import ModelSpec
from .stream_ingest import PipelineSpec

LOG_ENV_VAR = "TSTREAM_LOG"
_LOG_LEVELS = {
    "debug": logging.DEBUG,
    "info": logging.INFO,
    "warning": logging.WARNING,
    "error": logging.ERROR,
}
_PACKAGE_LOGGER = "TSTREAM_engine"


def configure_logging(level: Optional[str] = None) -> logging.Logger:
    """Attach a single stream handler to the package logger."""
    logger = logging.getLogger(_PACKAGE_LOGGER)
    requested = (level or os.environ.get(LOG_ENV_VAR) or "warning").strip().lower()
    resolved = _LOG_LEVELS.get(requested)

    if not any(getattr(handler, "_tstream", False) for handler in logger.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)-7s %(name)s: %(message)s"))
        handler._tstream = True
        logger.addHandler(handler)

    logger.setLevel(resolved if resolved is not None else logging.WARNING)
    if resolved is None:
        logger.warning("Unknown %s value %r; using 'warning'", LOG_ENV_VAR, requested)
    return logger


@dataclass(frozen=True)
class StoreConfig:
    partitions: int = 4
    max_versions: int = 8
    hash_seed: int = 0

    def __post_init__(self):
        if self.partitions < 1:
            raise ValidationError("partitions must be >= 1")
        if self.max_versions < 1:
            raise ValidationError("max_versions must be >= 1")
        if not 0 <= self.hash_seed < 2**64:
            raise ValidationError("hash_seed must fit in 64 bits")


@dataclass(frozen=True)
class TxnConfig:
    executors: int = 4
    batch_size: int = 256
    batch_timeout_ms: float = 5.0
    queue_capacity: int = 4096
    # Replay mode seals inline every batch_size updates; live mode runs a background sealer
    auto_seal: bool = False

    def __post_init__(self):
        if self.executors < 1:
            raise ValidationError("executors must be >= 1")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.batch_timeout_ms <= 0:
            raise ValidationError("batch_timeout_ms must be > 0")
        if self.queue_capacity < self.batch_size:
            raise ValidationError("queue_capacity must be >= batch_size")


@dataclass(frozen=True)
class DurabilityConfig:
    directory: Optional[str] = None
    checkpoint_every: int = 64
    # Group commit: fsync every G epochs (G > 1 weakens durability to the last G epochs)
    fsync_every: int = 1
    retain_checkpoints: int = 2
    background_checkpoints: bool = True

    def __post_init__(self):
        if self.checkpoint_every < 1:
            raise ValidationError("checkpoint_every must be >= 1")
        if self.fsync_every < 1:
            raise ValidationError("fsync_every must be >= 1")
        if self.retain_checkpoints < 1:
            raise ValidationError("retain_checkpoints must be >= 1")

    @property
    def enabled(self) -> bool:
        return self.directory is not None


@dataclass(frozen=True)
class IngestConfig:
    capacity: int = 4096
    timeout_ms: float = 100.0
    workers: int = 0
    # Per-source state kept before idle sources are evicted
    max_sources: int = 65536

    def __post_init__(self):
        if self.capacity < 1:
            raise ValidationError("capacity must be >= 1")
        if self.timeout_ms < 0:
            raise ValidationError("timeout_ms must be >= 0")
        if self.workers < 0:
            raise ValidationError("workers must be >= 0")
        if self.max_sources < 1:
            raise ValidationError("max_sources must be >= 1")


@dataclass(frozen=True)
class LearnerConfig:
    model: ModelSpec = field(default_factory=ModelSpec)
    learners: int = 1
    retries: int = 3

    def __post_init__(self):
        if self.learners < 1:
            raise ValidationError("learners must be >= 1")
        if self.retries < 0:
            raise ValidationError("retries must be >= 0")


@dataclass(frozen=True)
class EngineConfig:
    store: StoreConfig = field(default_factory=StoreConfig)
    txn: TxnConfig = field(default_factory=TxnConfig)
    durability: DurabilityConfig = field(default_factory=DurabilityConfig)
    ingest: IngestConfig = field(default_factory=IngestConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    pipeline: PipelineSpec = field(default_factory=PipelineSpec)

    @classmethod
    def from_dict(cls, data: dict) -> "EngineConfig":
        try:
            learner = dict(data.get("learner", {}))
            if "model" in learner:
                learner["model"] = ModelSpec.from_dict(learner["model"])
            return cls(
                store=StoreConfig(**data.get("store", {})),
                txn=TxnConfig(**data.get("txn", {})),
                durability=DurabilityConfig(**data.get("durability", {})),
                ingest=IngestConfig(**data.get("ingest", {})),
                learner=LearnerConfig(**learner),
                pipeline=PipelineSpec.from_dict(data.get("pipeline", {})),
            )
        except TypeError as exc:
            raise ValidationError(f"Invalid engine configuration: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "store": dataclasses.asdict(self.store),
            "txn": dataclasses.asdict(self.txn),
            "durability": dataclasses.asdict(self.durability),
            "ingest": dataclasses.asdict(self.ingest),
            "learner": {
                "model": self.learner.model.to_dict(),
                "learners": self.learner.learners,
                "retries": self.learner.retries,
            },
            "pipeline": self.pipeline.to_dict(),
        }

    def with_overrides(self, **overrides: Any) -> "EngineConfig":
        """Return a copy with ``section__field=value`` overrides applied (None values ignored)."""
        sections: dict = {}
        for name, value in overrides.items():
            if value is None:
                continue
            section, _, attr = name.partition("__")
            if not attr or not hasattr(self, section):
                raise ValidationError(f"Unknown configuration override: {name}")
            sections.setdefault(section, {})[attr] = value

        config = self
        for section, values in sections.items():
            current = getattr(config, section)
            config = dataclasses.replace(config, **{section: dataclasses.replace(current, **values)})
        return config


def load_config(path: Union[str, Path, None]) -> EngineConfig:
    """Load an EngineConfig from a JSON file; ``None`` yields defaults."""
    if path is None:
        return EngineConfig()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"Config file {path} is not valid JSON: {exc}") from exc
    return EngineConfig.from_dict(data)
