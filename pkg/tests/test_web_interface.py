#
# test_web_interface.py
# TStream-Engine-py
#
# Drives the Flask inference API through its test client: ingest, predict, replies, state reads, and checkpoints.
#
# Thales Matheus Mendonça Santos - November 2025

import pytest

from TSTREAM_engine.core.config import EngineConfig
from TSTREAM_engine.core.engine import Engine
from TSTREAM_engine.core.learner import weight_key
from TSTREAM_engine.web_interface import create_app


@pytest.fixture(scope="function")
def client(engine):
    app = create_app(engine)
    app.config["TESTING"] = True
    return app.test_client()


def _observations(count, value=1.0, label=1.0):
    return [{"source": "s1", "ts": index, "features": {"x": value}, "label": label} for index in range(count)]


def test_predict_before_training_is_one_half(client):
    # No weights committed yet: sigmoid(0) at epoch 0
    response = client.post("/api/predict", json={"features": {"x": 2.0}})
    assert response.status_code == 200
    body = response.get_json()
    assert body["prediction"] == 0.5
    assert body["epoch"] == 0
    assert body["values"] == {"x": 0.0, "bias": 0.0}


def test_events_commit_and_shift_predictions(client, engine):
    # Positive examples with commit=1 are visible to the next prediction
    response = client.post("/api/events?commit=1", json={"events": _observations(32)})
    assert response.status_code == 200
    body = response.get_json()
    assert body == {"received": 32, "accepted": 32, "watermark": engine.store.watermark}
    assert body["watermark"] >= 1

    prediction = client.post("/api/predict", json={"features": {"x": 1.0}, "channel": "ui"}).get_json()
    assert prediction["prediction"] > 0.5
    assert prediction["epoch"] == engine.store.watermark
    assert prediction["channel"] == "ui"


def test_query_events_reach_their_reply_channel(client):
    # A query event's reply lands in the mailbox named after its source
    events = _observations(16) + [{"source": "ui", "ts": 100, "kind": "query", "features": {"x": 1.0}}]
    assert client.post("/api/events?commit=1", json=events).status_code == 200

    replies = client.get("/api/replies/ui").get_json()
    assert replies["channel"] == "ui"
    assert len(replies["replies"]) == 1
    assert replies["replies"][0]["prediction"] > 0.5
    assert client.get("/api/replies/ui").get_json()["replies"] == []


def test_state_reads_and_time_travel(client, engine):
    # Current and past epochs are readable; epochs beyond the watermark are 404
    client.post("/api/events?commit=1", json=_observations(16))
    first = client.get(f"/api/state/params/{weight_key('x').name}").get_json()
    client.post("/api/events?commit=1", json=_observations(16))

    current = client.get(f"/api/state/params/{weight_key('x').name}").get_json()
    assert current["key"] == "params:w:x"
    assert current["epoch"] == engine.store.watermark == 2
    assert current["value"][0] > first["value"][0]

    past = client.get(f"/api/state/params/{weight_key('x').name}?epoch=1").get_json()
    assert past["epoch"] == 1
    assert past["value"] == first["value"]

    assert client.get("/api/state/params/w:x?epoch=9").status_code == 404
    assert client.get("/api/state/params/missing").get_json()["value"] is None


def test_bad_requests_are_400(client):
    # Unknown namespaces, malformed events, and bad bodies are client errors
    assert client.get("/api/state/weights/w:x").status_code == 400
    assert client.post("/api/events", data="not json", content_type="text/plain").status_code == 400
    assert client.post("/api/events", json=[{"source": "s1"}]).status_code == 400
    assert client.post("/api/events", json=[{"source": "s1", "ts": 1, "features": [1, 2]}]).status_code == 400
    assert client.post("/api/predict", json={"features": [1.0]}).status_code == 400


def test_metrics_reconcile(client):
    # The metrics endpoint returns the run report
    client.post("/api/events?commit=1", json=_observations(20))
    body = client.get("/api/metrics").get_json()
    assert body["ingested"] == 20
    assert body["committed"] == 20
    assert body["reconciled"] is True


def test_checkpoint_needs_durability(client):
    # Without a state directory the checkpoint request conflicts
    response = client.post("/api/checkpoint")
    assert response.status_code == 409
    assert "error" in response.get_json()


def test_checkpoint_with_durability(tmp_path):
    # With a state directory the newest manifest is returned
    config = EngineConfig().with_overrides(txn__batch_size=8, durability__directory=str(tmp_path / "state"))
    with Engine(config) as engine:
        client = create_app(engine).test_client()
        client.post("/api/events?commit=1", json=_observations(8))
        body = client.post("/api/checkpoint").get_json()
    assert body["epoch"] == 1
    assert body["sequence"] == 1
