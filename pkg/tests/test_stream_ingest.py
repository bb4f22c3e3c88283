#
# test_stream_ingest.py
# TStream-Engine-py
#
# Exercises pipeline stages, tumbling windows, drop accounting, reply routing, and trace files.
#
# Thales Matheus Mendonça Santos - November 2025

import struct
import threading

import numpy as np
import pytest

from TSTREAM_engine.core.config import IngestConfig
from TSTREAM_engine.core.errors import ValidationError
from TSTREAM_engine.core.factories import WorkloadSpec, generate_events
from TSTREAM_engine.core.learner import BIAS_KEY, TrainExample, weight_key
from TSTREAM_engine.core.stream_ingest import (
    AggregateStage,
    Condition,
    Derivation,
    DropReason,
    FilterStage,
    InferenceReply,
    InferenceRequest,
    PipelineSpec,
    Reducer,
    ReplyRouter,
    Sink,
    StreamEvent,
    StreamIngestor,
    TransformStage,
    TumblingWindow,
    WindowUnit,
    counter_key,
    run_window,
    to_inference,
)
from TSTREAM_engine.core.traces import TRACE_HEADER, parse_event, read_trace, write_trace
from TSTREAM_engine.core.transactions import TxnKind


def _collecting(spec, config=None):
    items = []
    ingestor = StreamIngestor(spec, config or IngestConfig(), lambda item: items.append(item) or True)
    return ingestor, items


def _obs(ts, value=1.0, source="s", name="x", label=None):
    return StreamEvent.observation(source, ts, {name: value}, label)


def test_identity_pipeline_emits_train_example():
    # A well-formed observation through an empty pipeline becomes one TrainExample
    ingestor, items = _collecting(PipelineSpec())
    assert ingestor.ingest(StreamEvent.observation("s", 3, {"x": 1.5}, 1.0))

    assert len(items) == 1
    example = items[0]
    assert isinstance(example, TrainExample)
    assert example.feature_map() == {"x": 1.5}
    assert example.label == 1.0
    assert example.event_ts == 3
    assert ingestor.stats().emitted == 1


def test_malformed_and_filtered_events_are_counted():
    # NaN features are malformed; failing predicates and ts regressions are filtered
    spec = PipelineSpec((FilterStage((Condition("x", ">", 0.0),)),))
    ingestor, items = _collecting(spec)

    assert not ingestor.ingest(_obs(0, float("nan")))
    assert not ingestor.ingest(_obs(1, -2.0))
    assert ingestor.ingest(_obs(5, 2.0))
    assert not ingestor.ingest(_obs(4, 2.0))
    assert ingestor.ingest(_obs(4, 2.0, source="other"))
    assert not ingestor.ingest(StreamEvent.observation("", 6, {"x": 1.0}))

    stats = ingestor.stats()
    assert stats.dropped[DropReason.MALFORMED] == 2
    assert stats.dropped[DropReason.FILTERED] == 2
    assert len(items) == 2
    assert stats.reconciles()


def test_queries_become_inference_requests():
    # Query events surface as InferenceRequests on their source's channel
    ingestor, items = _collecting(PipelineSpec())
    ingestor.ingest(StreamEvent.query("clinic", 2, {"x1": 1.0, "x2": 2.0}))

    request = items[0]
    assert isinstance(request, InferenceRequest)
    assert request.channel_id == "clinic"
    assert request.feature_map() == {"x1": 1.0, "x2": 2.0}


def test_raw_payloads_are_decoded_or_dropped():
    # name=value payloads decode into observations; garbage is malformed
    ingestor, items = _collecting(PipelineSpec())
    assert ingestor.ingest(StreamEvent.raw("s", 0, b"hr=72.5; spo2=97;label=1"))
    assert not ingestor.ingest(StreamEvent.raw("s", 1, b"hr=fast"))
    assert not ingestor.ingest(StreamEvent.raw("s", 2, b"\xff\xfe"))

    assert items[0].feature_map() == {"hr": 72.5, "spo2": 97.0}
    assert items[0].label == 1.0
    assert ingestor.stats().dropped[DropReason.MALFORMED] == 2


def test_count_window_emits_on_close():
    # W=5 over ten unit events: two outputs, each summing to 5
    window = TumblingWindow(AggregateStage(5, Reducer.SUM))
    outputs = [run_window(window, _obs(ts)) for ts in range(10)]
    emitted = [output for output in outputs if output is not None]

    assert [output.feature_map()["x"] for output in emitted] == [5.0, 5.0]
    assert outputs[4] is not None and outputs[9] is not None


def test_count_window_boundary_leaves_pending_event():
    # W=3 with four events: one output after the third, the fourth pends
    window = TumblingWindow(AggregateStage(3))
    outputs = [run_window(window, _obs(ts)) for ts in range(4)]

    assert [output is not None for output in outputs] == [False, False, True, False]
    assert window.pending == 1
    assert window.close().feature_map() == {"x": 1.0}
    assert window.pending == 0


def test_window_sum_is_conserved():
    # Sum over all window outputs equals the sum over all inputs
    rng = np.random.default_rng(4)
    values = [float(v) for v in rng.integers(-50, 50, size=97)]
    ingestor, items = _collecting(PipelineSpec((AggregateStage(7, Reducer.SUM),)))
    for ts, value in enumerate(values):
        ingestor.ingest(_obs(ts, value))
    ingestor.flush_windows()

    assert sum(item.feature_map()["x"] for item in items) == sum(values)
    assert len(items) == 14
    assert ingestor.stats().reconciles()


def test_time_window_closes_on_bucket_change():
    # Time unit windows group by event_ts // size
    window = TumblingWindow(AggregateStage(10, Reducer.SUM, WindowUnit.TIME))
    outputs = [run_window(window, _obs(ts, float(ts))) for ts in (0, 5, 12, 25)]

    assert outputs[:2] == [None, None]
    assert outputs[2].feature_map() == {"x": 5.0}
    assert outputs[3].feature_map() == {"x": 12.0}
    assert outputs[3].event_ts == 12


def test_reducers():
    # Mean, Count, and Last per feature name; the last non-null label is kept
    members = [
        StreamEvent.observation("s", 0, {"a": 1.0, "b": 4.0}, 0.0),
        StreamEvent.observation("s", 1, {"a": 3.0}),
    ]
    results = {}
    for reducer in (Reducer.MEAN, Reducer.COUNT, Reducer.LAST):
        window = TumblingWindow(AggregateStage(2, reducer))
        outputs = [run_window(window, member) for member in members]
        results[reducer] = outputs[-1]

    assert results[Reducer.MEAN].feature_map() == {"a": 2.0, "b": 4.0}
    assert results[Reducer.COUNT].feature_map() == {"a": 2.0, "b": 1.0}
    assert results[Reducer.LAST].feature_map() == {"a": 3.0, "b": 4.0}
    assert results[Reducer.LAST].label == 0.0


def test_transform_stage_order():
    # Renames apply first, then derivations, drops, and the keep-list
    stage = TransformStage(
        rename=(("temp", "t"),),
        derive=(Derivation("t2", "mul", ("t", 2.0)), Derivation("missing", "add", ("nope", 1.0))),
        drop=("hr",),
        keep=("t2", "hr", "spo2"),
    )
    event = stage.apply(StreamEvent.observation("s", 0, {"temp": 37.0, "hr": 80.0, "spo2": 97.0}))
    assert event.feature_map() == {"t2": 74.0, "spo2": 97.0}


def test_failing_transform_drops_event():
    # Division by zero inside a transform counts as malformed
    spec = PipelineSpec((TransformStage(derive=(Derivation("r", "div", ("x", 0.0)),)),))
    ingestor, items = _collecting(spec)
    assert not ingestor.ingest(_obs(0))
    assert items == []
    assert ingestor.stats().dropped[DropReason.MALFORMED] == 1


def test_pipeline_spec_from_dict():
    # Declarative specs load, serialize back, and refuse a second aggregate
    data = {
        "sink": "count",
        "stages": [
            {"type": "filter", "match": "any", "where": [{"field": "$label", "op": "exists"},
                                                       {"field": "x", "op": ">=", "value": 2}]},
            {"type": "transform", "rename": {"a": "b"}, "derive": [{"target": "c", "op": "neg", "args": ["b"]}]},
            {"type": "aggregate", "size": 4, "reducer": "mean"},
        ],
    }
    spec = PipelineSpec.from_dict(data)
    assert spec.sink is Sink.COUNT
    assert spec.aggregate == AggregateStage(4, Reducer.MEAN)
    assert PipelineSpec.from_dict(spec.to_dict()) == spec

    with pytest.raises(ValidationError):
        PipelineSpec((AggregateStage(2), AggregateStage(3)))
    with pytest.raises(ValidationError):
        PipelineSpec.from_dict({"stages": [{"type": "sliding"}]})
    with pytest.raises(ValidationError):
        PipelineSpec.from_dict({"stages": [{"type": "aggregate", "size": 0}]})
    with pytest.raises(ValidationError):
        Condition("x", "~", 1.0)


def test_drop_accounting_reconciles_with_open_windows():
    # ingested == emitted + absorbed + dropped + in_flight before and after flushing
    spec = PipelineSpec((FilterStage((Condition("x", "!=", 0.0),)), AggregateStage(3)))
    ingestor, _ = _collecting(spec)
    for ts in range(11):
        ingestor.ingest(_obs(ts, float(ts % 4)))
    ingestor.ingest(_obs(20, float("inf")))

    before = ingestor.stats()
    assert before.reconciles()
    assert before.in_flight > 0
    ingestor.flush_windows()
    after = ingestor.stats()
    assert after.reconciles()
    assert after.in_flight == 0


def test_refused_dispatch_counts_backpressure():
    # A dispatcher that refuses items turns them into backpressure drops
    ingestor = StreamIngestor(PipelineSpec(), IngestConfig(), lambda item: False)
    assert not ingestor.ingest(_obs(0))
    stats = ingestor.stats()
    assert stats.dropped[DropReason.BACKPRESSURE] == 1
    assert stats.reconciles()


def test_idle_sources_are_evicted_past_the_cap():
    # Beyond max_sources the least recent idle source goes; one with a pending window stays
    spec = PipelineSpec((AggregateStage(2),))
    ingestor, items = _collecting(spec, IngestConfig(max_sources=2))
    ingestor.ingest(_obs(0, source="a"))
    ingestor.ingest(_obs(0, source="b"))
    ingestor.ingest(_obs(1, source="b"))
    ingestor.ingest(_obs(0, source="c"))

    assert ingestor.tracked_sources == 2
    assert len(items) == 1
    assert ingestor.flush_windows() == 2
    assert sorted(item.features[0][1] for item in items) == [1.0, 1.0, 2.0]
    stats = ingestor.stats()
    assert stats.reconciles()
    assert stats.in_flight == 0

    ingestor.ingest(_obs(0, source="d"))
    assert ingestor.tracked_sources == 2
    with pytest.raises(ValidationError):
        IngestConfig(max_sources=0)


def test_replay_is_deterministic():
    # The same trace through the same pipeline yields the same work items
    events = generate_events(WorkloadSpec(events=300, keys=8, seed=2))
    spec = PipelineSpec((AggregateStage(2, Reducer.SUM),))
    runs = []
    for _ in range(2):
        ingestor, items = _collecting(spec)
        for event in events:
            ingestor.ingest(event)
        ingestor.flush_windows()
        runs.append(items)
    assert runs[0] == runs[1]


def test_worker_lanes_preserve_per_source_order():
    # With worker lanes every source still arrives in order
    events = [_obs(ts, source=f"s{ts % 5}") for ts in range(500)]
    lock = threading.Lock()
    items = []

    def dispatch(item):
        with lock:
            items.append(item)
        return True

    ingestor = StreamIngestor(PipelineSpec(), IngestConfig(workers=3), dispatch)
    for event in events:
        ingestor.ingest(event)
    ingestor.drain()
    ingestor.close()

    assert len(items) == 500
    by_source = {}
    for item in items:
        by_source.setdefault(item.event_ts % 5, []).append(item.event_ts)
    assert all(stamps == sorted(stamps) for stamps in by_source.values())
    assert ingestor.stats().reconciles()


def test_full_lane_drops_with_backpressure():
    # A saturated lane drops after the timeout instead of blocking forever
    release = threading.Event()

    def dispatch(item):
        release.wait(5.0)
        return True

    ingestor = StreamIngestor(PipelineSpec(), IngestConfig(capacity=1, timeout_ms=0.0, workers=1), dispatch)
    accepted = [ingestor.ingest(_obs(ts)) for ts in range(6)]
    release.set()
    ingestor.drain()
    ingestor.close()

    stats = ingestor.stats()
    assert stats.dropped[DropReason.BACKPRESSURE] >= 1
    assert stats.emitted == sum(accepted)
    assert stats.reconciles()


def test_to_inference_key_mapping():
    # Learner queries read weights plus bias; counter queries read counters
    request = InferenceRequest((("x1", 1.0), ("x2", 2.0)), "chan")
    learn = to_inference(request)
    assert learn.kind is TxnKind.INFERENCE
    assert learn.keys() == [weight_key("x1"), weight_key("x2"), BIAS_KEY]
    assert to_inference(request, Sink.COUNT).keys() == [counter_key("x1"), counter_key("x2")]


def test_reply_router_counts_abandoned_replies():
    # Replies to a closed channel are abandoned, never raised
    router = ReplyRouter()
    channel = router.open("a")
    assert router.deliver(InferenceReply(1, "a", 0.5, 3))
    channel.close()
    assert not router.deliver(InferenceReply(2, "a", 0.5, 3))
    assert router.abandoned == 1

    strict = ReplyRouter(auto_open=False)
    assert not strict.deliver(InferenceReply(3, "nobody", None, None))
    assert strict.abandoned == 1
    assert channel.drain()[0].to_dict() == {"request_id": 1, "channel": "a", "prediction": 0.5,
                                             "epoch": 3, "values": {}}


def test_full_reply_channel_refuses_and_counts():
    # A channel at capacity refuses further replies instead of evicting queued ones
    router = ReplyRouter(maxlen=2)
    assert router.deliver(InferenceReply(1, "a", 0.1, 1))
    assert router.deliver(InferenceReply(2, "a", 0.2, 1))
    assert not router.deliver(InferenceReply(3, "a", 0.3, 1))
    assert router.abandoned == 1

    channel = router.get("a")
    assert [reply.request_id for reply in channel.drain()] == [1, 2]
    assert router.deliver(InferenceReply(4, "a", 0.4, 1))
    assert router.abandoned == 1


def test_trace_round_trip_is_bit_exact(tmp_path):
    # Awkward floats and raw payloads survive a write/read cycle bit for bit, alongside 10,000 generated events
    awkward = [0.1, -0.0, 5e-324, 1.7976931348623157e308, 1 / 3, -2.5e-17]
    events = [StreamEvent.observation("s", ts, {"v": value}, value) for ts, value in enumerate(awkward)]
    events.append(StreamEvent.raw("r", 10, b"x=1;label=0"))
    events.append(StreamEvent.query("q", 11, {}))
    events.extend(generate_events(WorkloadSpec(events=10000, keys=32, zipf=0.8, seed=13)))
    path = tmp_path / "trace.tsv"
    write_trace(path, events)

    loaded = read_trace(path)
    assert loaded == events
    for original, copy in zip(events, loaded):
        originals = [value for _, value in original.features]
        copies = [value for _, value in copy.features]
        assert struct.pack(f"<{len(originals)}d", *originals) == struct.pack(f"<{len(copies)}d", *copies)


def test_trace_errors(tmp_path):
    # Missing header, short lines, and reserved characters are rejected
    path = tmp_path / "bad.tsv"
    path.write_text("s\t0\tobs\tx=1\t-\n", encoding="utf-8")
    with pytest.raises(ValidationError):
        read_trace(path)

    path.write_text(f"{TRACE_HEADER}\ns\t0\tobs\n", encoding="utf-8")
    with pytest.raises(ValidationError, match="line 2"):
        read_trace(path)

    with pytest.raises(ValidationError):
        parse_event("s\t0\tobs\tx=abc\t-")
    with pytest.raises(ValidationError):
        write_trace(tmp_path / "out.tsv", [StreamEvent.observation("a,b", 0, {"x": 1.0})])
