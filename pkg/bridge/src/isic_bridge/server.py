"""Line-oriented JSON server for the speaker protocol.

One request in flight per connection: each line is answered before the
next is read, which matches the consumer's decode loop and keeps the
protocol trivially debuggable. Protocol violations are answered with an
error message and the connection stays open; only EOF or a transport
error closes it.
"""

from __future__ import annotations

import json
import math
import signal
import socketserver
import threading

from .backend import BridgeBackend

NORMALIZATION_TOLERANCE = 1e-6


def _check_normalized(logp):
    peak = max(logp)
    if peak == float("-inf"):
        raise ValueError("served vector has no mass")
    total = peak + math.log(sum(math.exp(x - peak) for x in logp))
    if abs(total) > NORMALIZATION_TOLERANCE:
        raise ValueError(f"served vector is not normalized (logsumexp={total})")


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        backend = self.server.backend
        while True:
            line = self.rfile.readline()
            if not line:
                return
            try:
                reply = self._answer(backend, line)
            except BrokenPipeError:
                return
            try:
                self.wfile.write((json.dumps(reply) + "\n").encode("utf-8"))
            except (BrokenPipeError, ConnectionResetError):
                return

    def _answer(self, backend, line):
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as e:
            return {"type": "error", "message": f"malformed JSON: {e.msg}"}
        if not isinstance(msg, dict):
            return {"type": "error", "message": "message must be an object"}
        kind = msg.get("type")
        if kind == "hello":
            return {"type": "vocab", "tokens": backend.vocab(), "eos": backend.eos()}
        if kind == "next":
            if "image" not in msg or "prefix" not in msg:
                return {"type": "error", "message": "next needs image and prefix"}
            try:
                logp = [float(x) for x in backend.logprobs(msg["image"], msg["prefix"])]
                _check_normalized(logp)
            except Exception as e:  # surface backend failures, keep serving
                return {"type": "error", "message": str(e)}
            return {"type": "dist", "logp": logp}
        return {"type": "error", "message": f"unknown message type {kind!r}"}


class BridgeServer:
    """In-process handle: start/stop around a threading TCP server."""

    def __init__(self, backend: BridgeBackend, host: str = "127.0.0.1", port: int = 0):
        self._server = socketserver.ThreadingTCPServer((host, port), _Handler)
        self._server.daemon_threads = True
        self._server.allow_reuse_address = True
        self._server.backend = backend
        self._thread = None

    @property
    def address(self):
        host, port = self._server.server_address[:2]
        return f"{host}:{port}"

    def start(self):
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def serve(backend: BridgeBackend, address="127.0.0.1:0", install_signal_handlers=True):
    """Serve until SIGINT/SIGTERM; blocks. Returns the exit signal number."""
    if isinstance(address, str):
        host, _, port = address.rpartition(":")
        address = (host or "127.0.0.1", int(port))
    server = BridgeServer(backend, host=address[0], port=address[1])
    got = {}
    if install_signal_handlers:

        def _stop(signum, frame):
            got["signal"] = signum
            threading.Thread(target=server._server.shutdown, daemon=True).start()

        signal.signal(signal.SIGINT, _stop)
        signal.signal(signal.SIGTERM, _stop)
    print(f"serving speaker protocol on {server.address}", flush=True)
    try:
        server._server.serve_forever()
    finally:
        server._server.server_close()
    return got.get("signal", 0)
