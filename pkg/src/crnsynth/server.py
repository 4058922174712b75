"""HTTP service for running a study locally.

Endpoints (JSON unless noted):

* ``GET /api/trial?session=S`` — next unanswered trial for the session,
  or a completion marker once the batch is done
* ``POST /api/response`` — records ``{trial_id, session, choice,
  response_time_ms}``; 409 on duplicates, 404 on unknown trials
* ``GET /api/report`` — aggregated StudyResult
* ``GET /img/<trial_id>/<left|right>`` — the trial's image at the fixed
  200x400 display size
* ``GET /`` and ``/static/*`` — the browser client, when bundled

The threaded server plus the lock-guarded response store give
exactly-once semantics per (session, trial) under concurrent sessions.
"""

import io
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from PIL import Image

from .errors import DuplicateResponseError, EmptyResultError, UnknownTrialError
from .study import DISPLAY_SIZE, Response, aggregate, now_ms

_FALLBACK_PAGE = """<!doctype html>
<html><head><meta charset="utf-8"><title>pairwise study</title></head>
<body><p>Study service is running. Build the browser client into
<code>frontend/dist</code> (see README) or drive the JSON API directly.</p>
</body></html>"""

_CONTENT_TYPES = {".html": "text/html; charset=utf-8",
                  ".js": "text/javascript; charset=utf-8",
                  ".css": "text/css; charset=utf-8",
                  ".map": "application/json",
                  ".png": "image/png"}


class StudyServer:
    def __init__(self, store, batch, host="127.0.0.1", port=0,
                 sentinel_fail_threshold=2, frontend_dir=None):
        self.store = store
        self.batch = batch
        self.trials = batch.trial_map()
        self.order = [t.trial_id for t in batch.trials]
        self.sentinel_fail_threshold = sentinel_fail_threshold
        self.frontend_dir = Path(frontend_dir) if frontend_dir else None
        self._image_cache = {}
        self._cache_lock = threading.Lock()
        handler = _make_handler(self)
        self._httpd = ThreadingHTTPServer((host, port), handler)
        self._thread = None

    @property
    def port(self):
        return self._httpd.server_address[1]

    @property
    def url(self):
        host = self._httpd.server_address[0]
        return f"http://{host}:{self.port}"

    def start(self):
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self):
        self._httpd.serve_forever()

    def shutdown(self):
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread:
            self._thread.join(timeout=5)

    # -- API logic ---------------------------------------------------------

    def next_trial(self, session_id):
        answered = self.store.answered(session_id)
        for tid in self.order:
            if tid not in answered:
                trial = self.trials[tid]
                return {"done": False, "trial_id": tid,
                        "left_url": f"/img/{tid}/left",
                        "right_url": f"/img/{tid}/right",
                        "display_ms": trial.display_ms,
                        "answered": len(answered), "total": len(self.order)}
        return {"done": True, "answered": len(answered), "total": len(self.order)}

    def record(self, payload):
        for key in ("trial_id", "session", "choice"):
            if key not in payload:
                raise ValueError(f"response payload missing {key!r}")
        response = Response(trial_id=payload["trial_id"],
                            session_id=payload["session"],
                            choice=payload["choice"],
                            response_time_ms=float(payload.get("response_time_ms", 0.0)),
                            timestamp=now_ms())
        return self.store.record(response)

    def report(self):
        result = aggregate(self.store, self.batch, self.sentinel_fail_threshold)
        return result.to_json()

    def image_bytes(self, trial_id, side):
        trial = self.trials.get(trial_id)
        if trial is None or side not in ("left", "right"):
            raise UnknownTrialError(trial_id)
        path = trial.left_image if side == "left" else trial.right_image
        with self._cache_lock:
            cached = self._image_cache.get(path)
        if cached is not None:
            return cached
        img = Image.open(path).convert("RGB")
        img = img.resize((DISPLAY_SIZE[1], DISPLAY_SIZE[0]), Image.BILINEAR)
        buf = io.BytesIO()
        img.save(buf, format="PNG")
        data = buf.getvalue()
        with self._cache_lock:
            self._image_cache[path] = data
        return data


def _make_handler(server):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):
            pass

        def _send_json(self, obj, code=200):
            body = json.dumps(obj).encode()
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _send_bytes(self, body, content_type, code=200):
            self.send_response(code)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            url = urlparse(self.path)
            parts = [p for p in url.path.split("/") if p]
            try:
                if url.path == "/api/trial":
                    session = parse_qs(url.query).get("session", [None])[0]
                    if not session:
                        return self._send_json({"error": "missing session"}, 400)
                    return self._send_json(server.next_trial(session))
                if url.path == "/api/report":
                    try:
                        return self._send_json(server.report())
                    except EmptyResultError as exc:
                        return self._send_json({"error": str(exc)}, 404)
                if len(parts) == 3 and parts[0] == "img":
                    try:
                        data = server.image_bytes(parts[1], parts[2])
                    except UnknownTrialError:
                        return self._send_json({"error": "unknown trial"}, 404)
                    return self._send_bytes(data, "image/png")
                return self._serve_static(url.path)
            except BrokenPipeError:
                pass

        def do_POST(self):
            url = urlparse(self.path)
            if url.path != "/api/response":
                return self._send_json({"error": "not found"}, 404)
            length = int(self.headers.get("Content-Length", 0))
            try:
                payload = json.loads(self.rfile.read(length) or b"{}")
            except json.JSONDecodeError:
                return self._send_json({"error": "invalid JSON"}, 400)
            try:
                ack = server.record(payload)
            except UnknownTrialError:
                return self._send_json({"error": "unknown trial"}, 404)
            except DuplicateResponseError as exc:
                return self._send_json({"error": str(exc)}, 409)
            except ValueError as exc:
                return self._send_json({"error": str(exc)}, 400)
            return self._send_json(ack)

        def _serve_static(self, path):
            if server.frontend_dir is None:
                if path in ("/", "/index.html"):
                    return self._send_bytes(_FALLBACK_PAGE.encode(),
                                            "text/html; charset=utf-8")
                return self._send_json({"error": "not found"}, 404)
            rel = "index.html" if path in ("/", "/index.html") else path.lstrip("/")
            if rel.startswith("static/"):
                rel = rel[len("static/"):]
            target = (server.frontend_dir / rel).resolve()
            root = server.frontend_dir.resolve()
            if root not in target.parents and target != root:
                return self._send_json({"error": "not found"}, 404)
            if not target.is_file():
                return self._send_json({"error": "not found"}, 404)
            ctype = _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
            return self._send_bytes(target.read_bytes(), ctype)

    return Handler


def serve_study(store, batch, bind_address="127.0.0.1:0", *,
                sentinel_fail_threshold=2, frontend_dir=None):
    """Starts the study service on ``host:port``; returns the server."""
    host, _, port = bind_address.partition(":")
    server = StudyServer(store, batch, host=host or "127.0.0.1",
                         port=int(port or 0),
                         sentinel_fail_threshold=sentinel_fail_threshold,
                         frontend_dir=frontend_dir)
    return server.start()
