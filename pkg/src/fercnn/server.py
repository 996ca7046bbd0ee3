"""HTTP inference service.

Endpoints:
    GET  /healthz          -> 200 "ok"
    POST /api/v1/predict   -> JSON {"pixels": [2304 ints 0..255]} or a
                              multipart upload of a 48x48 PGM; responds with
                              per-class probabilities, the top label and the
                              server-side latency in milliseconds
    GET  /...              -> web demo static assets

The model is loaded once and shared read-only across request threads;
handlers never mutate it. Malformed input gets 400 with a message, bodies
over the cap get 413.
"""

from __future__ import annotations

import json
import time
from email.parser import BytesParser
from email.policy import default as _email_policy
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from .data import EMOTIONS
from .layers import Model
from .pgm import read_pgm
from .validation import decode_pixel_list

MAX_BODY_BYTES = 1 << 20

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "application/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".map": "application/json; charset=utf-8",
    ".svg": "image/svg+xml",
    ".png": "image/png",
    ".ico": "image/x-icon",
}


def default_static_dir() -> Path:
    return Path(__file__).parent / "web"


class _BadRequest(ValueError):
    pass


def _decode_multipart_pgm(content_type: str, body: bytes) -> np.ndarray:
    prefix = f"Content-Type: {content_type}\r\n\r\n".encode("latin-1")
    msg = BytesParser(policy=_email_policy).parsebytes(prefix + body)
    if not msg.is_multipart():
        raise _BadRequest("expected a multipart body")
    for part in msg.iter_parts():
        payload = part.get_payload(decode=True)
        if payload:
            image = read_pgm(payload)
            if image.shape != (48, 48):
                raise _BadRequest(
                    f"expected a 48x48 image, got {image.shape[1]}x{image.shape[0]}")
            return (image.astype(np.float32) / 255.0).reshape(1, 1, 48, 48)
    raise _BadRequest("multipart body contains no file")


def _decode_request(content_type: str, body: bytes) -> np.ndarray:
    if content_type.startswith("multipart/"):
        return _decode_multipart_pgm(content_type, body)
    try:
        payload = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise _BadRequest("body is not valid JSON") from None
    if not isinstance(payload, dict) or "pixels" not in payload:
        raise _BadRequest('JSON body must be {"pixels": [...]}')
    pixels = payload["pixels"]
    if not isinstance(pixels, list):
        raise _BadRequest("pixels must be a list")
    try:
        return decode_pixel_list(pixels)
    except ValueError as e:
        raise _BadRequest(str(e)) from None


def make_handler(model: Model, static_dir: Path):
    static_root = Path(static_dir).resolve()

    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            pass

        def _send(self, status: int, body: bytes, content_type: str):
            self.send_response(status)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _send_json(self, status: int, obj):
            self._send(status, json.dumps(obj).encode("utf-8"), "application/json; charset=utf-8")

        def do_GET(self):
            path = self.path.split("?", 1)[0]
            if path == "/healthz":
                self._send(200, b"ok", "text/plain; charset=utf-8")
                return
            rel = "index.html" if path == "/" else path.lstrip("/")
            target = (static_root / rel).resolve()
            if not target.is_relative_to(static_root) or not target.is_file():
                self._send(404, b"not found", "text/plain; charset=utf-8")
                return
            ctype = _CONTENT_TYPES.get(target.suffix.lower(), "application/octet-stream")
            self._send(200, target.read_bytes(), ctype)

        def do_POST(self):
            if self.path.split("?", 1)[0] != "/api/v1/predict":
                self._send(404, b"not found", "text/plain; charset=utf-8")
                return
            length = int(self.headers.get("Content-Length") or 0)
            if length > MAX_BODY_BYTES:
                self._send_json(413, {"error": f"body exceeds {MAX_BODY_BYTES} bytes"})
                return
            body = self.rfile.read(length)
            t0 = time.perf_counter()
            try:
                x = _decode_request(self.headers.get("Content-Type", ""), body)
            except _BadRequest as e:
                self._send_json(400, {"error": str(e)})
                return
            probs, _ = model.forward(x, mode="infer")
            latency_ms = (time.perf_counter() - t0) * 1000.0
            row = probs[0]
            self._send_json(200, {
                "probabilities": {name: float(p) for name, p in zip(EMOTIONS, row)},
                "top": EMOTIONS[int(row.argmax())],
                "latency_ms": latency_ms,
            })

    return Handler


def create_server(model: Model, port: int = 0, static_dir=None) -> ThreadingHTTPServer:
    handler = make_handler(model, Path(static_dir) if static_dir else default_static_dir())
    return ThreadingHTTPServer(("127.0.0.1", port), handler)


def serve_forever(model: Model, port: int = 8000, static_dir=None) -> None:
    server = create_server(model, port=port, static_dir=static_dir)
    host, bound_port = server.server_address[:2]
    print(f"serving on http://{host}:{bound_port}/ (Ctrl-C to stop)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
