#
# traces.py
# TStream-Engine-py
#
# Reads and writes replayable event traces as tab-separated text with bit-exact float round-trips.
#
# Thales Matheus Mendonça Santos - November 2025

"""Event trace files.

One event per line after a ``# tstream-trace v1`` header::

    source_id <TAB> event_ts <TAB> kind <TAB> features <TAB> label

``kind`` is ``obs``, ``query`` or ``raw``; ``features`` is ``name=value``
pairs joined by commas (``-`` when empty) or, for raw events, the payload in
hex; ``label`` is a number or ``-``. Floats are written with ``repr`` so
every value reads back bit-for-bit.
"""

from pathlib import Path
from typing import Iterable, Iterator, List, Union

from .errors import ValidationError
from .stream_ingest import EventKind, StreamEvent

TRACE_HEADER = "# tstream-trace v1"
_EMPTY = "-"
_RESERVED = ("\t", "\n", "\r", ",", "=")


def _check_name(text: str, what: str) -> str:
    if not text or text == _EMPTY or any(ch in text for ch in _RESERVED):
        raise ValidationError(f"{what} {text!r} cannot be written to a trace")
    return text


def format_event(event: StreamEvent) -> str:
    source = _check_name(event.source_id, "Source id")
    if event.kind is EventKind.RAW:
        body = event.payload.hex() or _EMPTY
    elif event.features:
        body = ",".join(f"{_check_name(name, 'Feature name')}={value!r}" for name, value in event.features)
    else:
        body = _EMPTY
    label = _EMPTY if event.label is None else repr(float(event.label))
    return "\t".join((source, str(int(event.event_ts)), event.kind.value, body, label))


def parse_event(line: str, line_no: int = 0) -> StreamEvent:
    fields = line.rstrip("\r\n").split("\t")
    if len(fields) != 5:
        raise ValidationError(f"Trace line {line_no}: expected 5 fields, got {len(fields)}")
    source, ts_text, kind_text, body, label_text = fields
    try:
        kind = EventKind(kind_text)
        event_ts = int(ts_text)
        label = None if label_text == _EMPTY else float(label_text)
        if kind is EventKind.RAW:
            return StreamEvent(source, event_ts, kind, payload=b"" if body == _EMPTY else bytes.fromhex(body))
        features = []
        if body != _EMPTY:
            for pair in body.split(","):
                name, sep, value = pair.partition("=")
                if not sep:
                    raise ValueError(f"feature {pair!r} is not name=value")
                features.append((name, float(value)))
    except ValueError as exc:
        raise ValidationError(f"Trace line {line_no}: {exc}") from exc
    return StreamEvent(source, event_ts, kind, tuple(features), label)


def write_trace(path: Union[str, Path], events: Iterable[StreamEvent]) -> int:
    """Write ``events`` to ``path``; returns the number of events written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(TRACE_HEADER + "\n")
        for event in events:
            handle.write(format_event(event) + "\n")
            count += 1
    return count


def iter_trace(path: Union[str, Path]) -> Iterator[StreamEvent]:
    with open(path, "r", encoding="utf-8") as handle:
        first = handle.readline()
        if first.strip() != TRACE_HEADER:
            raise ValidationError(f"{path} is not a tstream trace (missing header)")
        for line_no, line in enumerate(handle, start=2):
            if not line.strip() or line.startswith("#"):
                continue
            yield parse_event(line, line_no)


def read_trace(path: Union[str, Path]) -> List[StreamEvent]:
    return list(iter_trace(path))
