#!/usr/bin/env python3
#
# web_interface.py
# TStream-Engine-py
#
# Serves the Flask JSON API for ingesting events, querying the adapting model, and reading versioned state.
#
# Thales Matheus Mendonça Santos - November 2025

"""Flask-powered inference front-end for a running engine."""

import argparse
import math

from flask import Flask, jsonify, request
from flask_cors import CORS

from .core.config import configure_logging
from .core.engine import Engine
from .core.errors import SnapshotError, StorageError, TStreamError, ValidationError
from .core.keys import Namespace, ShardKey
from .core.stream_ingest import EventKind, StreamEvent
from .run_workload import add_engine_arguments, build_config


def event_from_json(data: dict) -> StreamEvent:
    """``{"source", "ts", "kind", "features", "label", "payload"}`` to a StreamEvent."""
    if not isinstance(data, dict):
        raise ValidationError("Each event must be a JSON object")
    try:
        kind = EventKind(data.get("kind", EventKind.OBSERVATION.value))
        source = str(data["source"])
        ts = int(data["ts"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"Malformed event: {exc}") from exc
    if kind is EventKind.RAW:
        return StreamEvent.raw(source, ts, str(data.get("payload", "")).encode("utf-8"))
    features = data.get("features") or {}
    if not isinstance(features, dict):
        raise ValidationError("features must be an object of name: number")
    try:
        if kind is EventKind.QUERY:
            return StreamEvent.query(source, ts, features)
        return StreamEvent.observation(source, ts, features, data.get("label"))
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"Malformed event: {exc}") from exc


def _value_to_json(value):
    if value is None:
        return None
    if isinstance(value, bytes):
        return {"bytes": value.hex()}
    # JSON has no NaN/inf; committed values are finite but guard the encoder anyway
    return [float(x) if math.isfinite(x) else None for x in value.tolist()]


def create_app(engine: Engine) -> Flask:
    app = Flask(__name__)
    CORS(app)
    app.config["ENGINE"] = engine

    @app.errorhandler(ValidationError)
    def bad_request(exc):
        return jsonify({"error": str(exc)}), 400

    @app.route("/api/events", methods=["POST"])
    def ingest_events():
        payload = request.get_json(silent=True)
        if payload is None:
            return jsonify({"error": "Expected a JSON body"}), 400
        items = payload.get("events", []) if isinstance(payload, dict) else payload
        events = [event_from_json(item) for item in items]
        try:
            accepted = sum(engine.ingest(event) for event in events)
            # commit=1 makes the batch visible before responding
            if request.args.get("commit", "0") not in ("0", "false", ""):
                engine.drain()
        except TStreamError as exc:
            return jsonify({"error": str(exc)}), 503
        return jsonify({
            "received": len(events),
            "accepted": accepted,
            "watermark": engine.store.watermark,
        })

    @app.route("/api/predict", methods=["POST"])
    def predict():
        payload = request.get_json(silent=True) or {}
        features = payload.get("features")
        if not isinstance(features, dict):
            return jsonify({"error": "features must be an object of name: number"}), 400
        try:
            reply = engine.predict(features, channel_id=str(payload.get("channel", "api")))
        except (TypeError, ValueError) as exc:
            return jsonify({"error": str(exc)}), 400
        except TStreamError as exc:
            return jsonify({"error": str(exc)}), 503
        return jsonify(reply.to_dict())

    @app.route("/api/replies/<channel>")
    def replies(channel: str):
        mailbox = engine.replies.get(channel)
        drained = mailbox.drain() if mailbox is not None else []
        return jsonify({"channel": channel, "replies": [reply.to_dict() for reply in drained]})

    @app.route("/api/state/<namespace>/<path:name>")
    def read_state(namespace: str, name: str):
        try:
            key = ShardKey(Namespace[namespace.upper()], name)
        except KeyError:
            return jsonify({"error": f"Unknown namespace {namespace!r}"}), 400
        epoch = request.args.get("epoch", type=int)
        try:
            epoch_id, value = engine.state_at(key, epoch)
        except SnapshotError as exc:
            return jsonify({"error": str(exc)}), 404
        return jsonify({"key": key.label(), "epoch": epoch_id, "value": _value_to_json(value),
                        "horizon": engine.store.horizon()})

    @app.route("/api/metrics")
    def metrics():
        return jsonify(engine.report().to_dict())

    @app.route("/api/checkpoint", methods=["POST"])
    def checkpoint():
        try:
            manifest = engine.checkpoint()
        except StorageError as exc:
            return jsonify({"error": str(exc)}), 409
        if manifest is None:
            return jsonify({"error": "No checkpoint written"}), 409
        return jsonify({"epoch": manifest.epoch_id, "file": manifest.file, "sequence": manifest.sequence})

    return app


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("-H", "--host", default="127.0.0.1", help="Host to bind to (default: 127.0.0.1)")
    parser.add_argument("-p", "--port", type=int, default=5000, help="Port to bind to (default: 5000)")
    parser.add_argument("--debug", action="store_true", help="Enable debug mode")
    add_engine_arguments(parser)


def execute(args: argparse.Namespace) -> int:
    try:
        # Serving is live mode: a background sealer closes batches on size or timeout
        config = build_config(args).with_overrides(txn__auto_seal=True)
        engine = Engine(config)
    except (TStreamError, OSError) as exc:
        raise SystemExit(f"Cannot start engine: {exc}") from exc

    print("\n" + "=" * 72)
    print("TStream Engine Inference API")
    print("=" * 72 + "\n")
    print(f"Serving on http://{args.host}:{args.port}\n")
    try:
        create_app(engine).run(host=args.host, port=args.port, debug=args.debug, use_reloader=False)
    finally:
        engine.close()
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="TStream Engine inference API")
    add_arguments(parser)
    args = parser.parse_args(argv)
    configure_logging()
    return execute(args)


if __name__ == "__main__":
    raise SystemExit(main())
