"""HTTP layer: routes, request validation, error mapping.

Faults in the request (bad version header, malformed JSON, bad tensor
payload, out-of-range parameters) answer 400 with a one-line diagnostic;
failures inside the model implementation answer 500; unknown paths 404.
Every response, including errors, carries the protocol version header.

Connections are keep-alive HTTP/1.1 and each request is handled on its own
thread against a shared stateless app object.
"""

from __future__ import annotations

import json
import math
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .app import BackendApp
from .wire import (PROTO_HEADER, PROTO_VERSION, WireError, decode_tensor,
                   encode_tensor, field_int, field_number, field_str)

_MAX_BODY = 256 * 2 ** 20  # reject absurd payloads before buffering them


class Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "reference-backend/0.1"

    @property
    def app(self) -> BackendApp:
        return self.server.app

    def log_message(self, fmt, *args):
        if self.app.config.verbose:
            super().log_message(fmt, *args)

    def _reply(self, status: int, payload: dict):
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header(PROTO_HEADER, PROTO_VERSION)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _fail(self, status: int, message: str):
        self._reply(status, {"error": message})

    def _version_ok(self) -> bool:
        got = self.headers.get(PROTO_HEADER)
        if got != PROTO_VERSION:
            self._fail(400, f"protocol version header '{PROTO_HEADER}' is {got!r}, "
                            f"need {PROTO_VERSION!r}")
            return False
        return True

    def do_GET(self):
        if not self._version_ok():
            return
        if self.path != "/v1/health":
            self._fail(404, f"no such endpoint: GET {self.path}")
            return
        self._reply(200, {"status": "ok",
                          "native_resolution": self.app.native_resolution})

    def do_POST(self):
        try:
            length = int(self.headers.get("Content-Length", "0"))
        except ValueError:
            length = -1
        if length < 0 or length > _MAX_BODY:
            # cannot safely drain the stream, so drop the connection after replying
            self.close_connection = True
            self._fail(400, "missing, malformed, or oversized Content-Length")
            return
        raw = self.rfile.read(length) if length else b""
        if not self._version_ok():
            return
        handler = _POST_ROUTES.get(self.path)
        if handler is None:
            self._fail(404, f"no such endpoint: POST {self.path}")
            return
        try:
            body = json.loads(raw)
        except ValueError as exc:
            self._fail(400, f"request body is not valid JSON: {exc}")
            return
        if not isinstance(body, dict):
            self._fail(400, "request body must be a JSON object")
            return
        try:
            payload = handler(self, body)
        except WireError as exc:
            self._fail(400, str(exc))
        except Exception as exc:
            self._fail(500, f"{type(exc).__name__}: {exc}")
        else:
            self._reply(200, payload)

    def _denoise(self, body: dict) -> dict:
        x = decode_tensor(body)
        t = field_int(body, "t", minimum=0)
        alpha_bar = field_number(body, "alpha_bar")
        if not 0.0 < alpha_bar < 1.0:
            raise WireError(f"alpha_bar must lie strictly inside (0, 1), got {alpha_bar}")
        prompt = field_str(body, "prompt")
        guidance = field_number(body, "guidance")
        eps = np.asarray(self.app.denoise(x, t, alpha_bar, prompt, guidance))
        if eps.shape != x.shape:
            raise RuntimeError(f"denoise produced shape {eps.shape} for input {x.shape}")
        return encode_tensor(eps)

    def _upscale(self, body: dict) -> dict:
        x = decode_tensor(body)
        target_w = field_int(body, "target_w", minimum=1)
        target_h = field_int(body, "target_h", minimum=1)
        if target_w < x.shape[2] or target_h < x.shape[1]:
            raise WireError(f"upscale target {target_w}x{target_h} below source "
                            f"{x.shape[2]}x{x.shape[1]}")
        out = np.asarray(self.app.upscale(x, target_w, target_h))
        if out.shape != (x.shape[0], target_h, target_w):
            raise RuntimeError(f"upscale produced shape {out.shape} for target "
                               f"{target_w}x{target_h}")
        return encode_tensor(out)

    def _score(self, body: dict) -> dict:
        x = decode_tensor(body)
        prompt = field_str(body, "prompt")
        value = float(self.app.score(x, prompt))
        if not math.isfinite(value):
            raise RuntimeError(f"score is not finite: {value}")
        return {"score": value}


_POST_ROUTES = {
    "/v1/denoise": Handler._denoise,
    "/v1/upscale": Handler._upscale,
    "/v1/score": Handler._score,
}


class BackendServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address: tuple[str, int], app: BackendApp):
        super().__init__(address, Handler)
        self.app = app


def make_server(app: BackendApp, host: str | None = None,
                port: int | None = None) -> BackendServer:
    """Bound but not yet serving; port 0 picks a free one (see server_address)."""
    host = app.config.host if host is None else host
    port = app.config.port if port is None else port
    return BackendServer((host, port), app)


def serve(app: BackendApp) -> None:
    with make_server(app) as httpd:
        host, port = httpd.server_address[:2]
        print(f"listening on http://{host}:{port} (mode={app.config.mode})", flush=True)
        try:
            httpd.serve_forever()
        except KeyboardInterrupt:
            pass
