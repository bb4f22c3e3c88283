#
# keys.py
# TStream-Engine-py
#
# Defines shard keys, their namespaces, and the FNV-1a hash used to place keys on partitions.
#
# Thales Matheus Mendonça Santos - November 2025

"""Shard keys and hash partitioning."""

from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache
from typing import Union

from .errors import ValidationError

MAX_NAME_BYTES = 256

FNV64_OFFSET_BASIS = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


class Namespace(IntEnum):
    """Model parameters live in Params, learner bookkeeping in Meta."""

    PARAMS = 0
    META = 1


@dataclass(frozen=True, order=True)
class ShardKey:
    """(namespace, name) address of one state object, ordered lexicographically."""

    namespace: Namespace
    name: bytes

    def __post_init__(self):
        if not isinstance(self.namespace, Namespace):
            try:
                object.__setattr__(self, "namespace", Namespace(self.namespace))
            except ValueError as exc:
                raise ValidationError(f"Unknown namespace: {self.namespace!r}") from exc
        name = self.name
        if isinstance(name, str):
            name = name.encode("utf-8")
            object.__setattr__(self, "name", name)
        if not isinstance(name, bytes) or not name:
            raise ValidationError("Shard key name must be a non-empty byte string")
        if len(name) > MAX_NAME_BYTES:
            raise ValidationError(f"Shard key name exceeds {MAX_NAME_BYTES} bytes")

    @classmethod
    def params(cls, name: Union[str, bytes]) -> "ShardKey":
        return cls(Namespace.PARAMS, name)

    @classmethod
    def meta(cls, name: Union[str, bytes]) -> "ShardKey":
        return cls(Namespace.META, name)

    @property
    def is_params(self) -> bool:
        return self.namespace is Namespace.PARAMS

    def label(self) -> str:
        """Readable form used in logs, reports, and the web API."""
        return f"{self.namespace.name.lower()}:{self.name.decode('utf-8', errors='replace')}"

    def __str__(self) -> str:
        return self.label()


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a over ``data``."""
    value = FNV64_OFFSET_BASIS
    for byte in data:
        value ^= byte
        value = (value * FNV64_PRIME) & _MASK64
    return value


@lru_cache(maxsize=65536)
def _partition(namespace: int, name: bytes, partitions: int, seed: int) -> int:
    return (fnv1a64(bytes((namespace,)) + name) ^ seed) % partitions


def partition_of(key: ShardKey, config) -> int:
    """Partition index of ``key`` under ``config`` (a StoreConfig)."""
    return _partition(int(key.namespace), key.name, config.partitions, config.hash_seed & _MASK64)
