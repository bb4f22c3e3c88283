#
# errors.py
# TStream-Engine-py
#
# Declares the exception hierarchy shared by the store, transaction manager, durability layer, and CLIs.
#
# Thales Matheus Mendonça Santos - November 2025

"""Exception types raised across the engine."""


class TStreamError(Exception):
    """Base class for every engine error."""


class ValidationError(TStreamError, ValueError):
    """Malformed key, value, transaction, event, or configuration."""


class MonotonicityError(ValidationError):
    """An epoch arrived out of order."""


class DimensionMismatchError(ValidationError):
    """A Params vector changed dimension or a delta does not match its key."""


class SnapshotError(TStreamError, RuntimeError):
    """Snapshot handle used outside of its lifetime."""


class StaleSnapshotError(SnapshotError):
    """A version pinned by a live snapshot is gone (internal bug)."""


class HistoryUnavailableError(SnapshotError):
    """Requested epoch is older than the retained history."""


class StorageError(TStreamError, RuntimeError):
    """Write-ahead log or checkpoint I/O failed."""


class EngineHalted(TStreamError, RuntimeError):
    """The engine stopped after a storage failure and refuses new work."""


class CorruptRecordError(TStreamError, ValueError):
    """A record failed its length or CRC check."""


class SimulatedCrash(TStreamError, RuntimeError):
    """Raised by the crash injector to emulate a process failure."""
