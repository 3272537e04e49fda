"""JSON scoring endpoint over the standard library HTTP server.

POST /score  {"records": [{...}, ...]}  ->  {"results": [{id, probability, threshold, decision}]}
GET  /health                            ->  {"fingerprint": ..., "schema_version": ...}
"""

from __future__ import annotations

import json
import logging
import threading
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from . import ingest
from .ingest import COLUMNS, RecordSet
from .pipeline import SCORING_REQUIRED, ModelArtifact, score_records

log = logging.getLogger(__name__)

REQUEST_FIELDS = tuple(c for c in COLUMNS if c != "status")
MAX_BODY = 64 << 20


class RequestError(ValueError):
    def __init__(self, message: str, errors: list[dict] | None = None):
        super().__init__(message)
        self.errors = errors or []


def parse_request(body: bytes) -> RecordSet:
    """Validate a scoring request, collecting every field problem before failing."""
    try:
        doc = json.loads(body)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise RequestError(f"body is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("records"), list):
        raise RequestError('body must be an object with a "records" list')
    if not doc["records"]:
        raise RequestError('"records" must hold at least one record')
    errors, records = [], []
    for i, raw in enumerate(doc["records"]):
        if not isinstance(raw, dict):
            errors.append({"index": i, "field": None, "message": "record must be an object"})
            continue
        for name in sorted(set(raw) - set(REQUEST_FIELDS)):
            errors.append({"index": i, "field": name, "message": "unknown field"})
        values = {}
        for name in REQUEST_FIELDS:
            try:
                values[name] = ingest.coerce_field(name, raw.get(name))
            except ValueError as exc:
                errors.append({"index": i, "field": name, "message": str(exc)})
        for name in ("opportunity_id",) + SCORING_REQUIRED:
            if name in values and values[name] is None:
                errors.append({"index": i, "field": name, "message": "required"})
        if len(values) == len(REQUEST_FIELDS):
            records.append(ingest.OpportunityRecord(status=None, **values))
    if errors:
        raise RequestError(f"{len(errors)} field error(s)", errors)
    try:
        return RecordSet(tuple(records), "request")
    except ingest.ValidationError as exc:
        raise RequestError(str(exc)) from None


def score_payload(artifact: ModelArtifact, body: bytes) -> dict:
    rs = parse_request(body)
    sc = score_records(artifact, rs)
    return {
        "results": [
            {"id": r.opportunity_id, "probability": float(p), "threshold": float(t), "decision": d}
            for r, p, t, d in zip(rs.records, sc.probability, sc.threshold, sc.decision)
        ]
    }


def make_handler(artifact: ModelArtifact):
    health = {"fingerprint": artifact.fingerprint, "schema_version": artifact.schema_version}

    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def _send(self, status: int, doc: dict) -> None:
            body = json.dumps(doc).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            if self.path.rstrip("/") == "/health":
                self._send(HTTPStatus.OK, health)
            else:
                self._send(HTTPStatus.NOT_FOUND, {"error": f"no route {self.path}"})

        def do_POST(self):
            if self.path.rstrip("/") != "/score":
                self._send(HTTPStatus.NOT_FOUND, {"error": f"no route {self.path}"})
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
            except ValueError:
                length = -1
            if length < 0 or length > MAX_BODY:
                self._send(HTTPStatus.BAD_REQUEST, {"error": "bad Content-Length"})
                return
            body = self.rfile.read(length)
            try:
                self._send(HTTPStatus.OK, score_payload(artifact, body))
            except RequestError as exc:
                self._send(HTTPStatus.BAD_REQUEST, {"error": str(exc), "errors": exc.errors})
            except Exception as exc:
                log.exception("scoring failed")
                self._send(HTTPStatus.INTERNAL_SERVER_ERROR, {"error": f"scoring failed: {exc}"})

        def log_message(self, fmt, *args):
            log.info("%s - %s", self.address_string(), fmt % args)

    return Handler


def parse_address(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"address must be HOST:PORT, got {addr!r}")
    return host or "127.0.0.1", int(port)


def make_server(artifact: ModelArtifact, address: str | tuple[str, int]) -> ThreadingHTTPServer:
    if isinstance(address, str):
        address = parse_address(address)
    server = ThreadingHTTPServer(address, make_handler(artifact))
    server.daemon_threads = True
    return server


def serve(artifact: ModelArtifact, address) -> None:
    """Block serving requests until interrupted."""
    server = make_server(artifact, address)
    host, port = server.server_address[:2]
    log.info("scoring endpoint on http://%s:%d", host, port)
    try:
        server.serve_forever()
    finally:
        server.server_close()


def serve_in_thread(artifact: ModelArtifact, address=("127.0.0.1", 0)) -> tuple[ThreadingHTTPServer, threading.Thread]:
    """Start a server on a background thread; call ``server.shutdown()`` to stop."""
    server = make_server(artifact, address)
    t = threading.Thread(target=server.serve_forever, daemon=True)
    t.start()
    return server, t
