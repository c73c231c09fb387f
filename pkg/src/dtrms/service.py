"""Local socket front-end for a :class:`Coordinator`.

A connection is classified by its first byte:

* ``0x7E`` - a raw stream of telemetry frames (the 23-byte wire format),
  ingested in order with no reply;
* anything else - length-prefixed JSON messages: a 4-byte big-endian byte
  count followed by that many bytes of UTF-8 JSON, answered in kind.

A JSON prefix can never start with 0x7E since that would announce a message
of more than 2 GiB, which the server refuses anyway.
"""

from __future__ import annotations

import json
import logging
import socket
import socketserver
import struct
import threading
import time
from typing import Callable, Optional

from . import frame_codec
from .errors import DtrmsError, MalformedQuery

log = logging.getLogger(__name__)

MAX_MESSAGE = 1 << 20
_LEN = struct.Struct(">I")


def send_msg(sock: socket.socket, obj) -> None:
    body = json.dumps(obj, separators=(",", ":")).encode()
    sock.sendall(_LEN.pack(len(body)) + body)


def _recv_exact(sock: socket.socket, n: int, prefix: bytes = b"") -> Optional[bytes]:
    buf = bytearray(prefix)
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None if not buf else bytes(buf)
        buf += chunk
    return bytes(buf)


def recv_msg(sock: socket.socket, prefix: bytes = b""):
    head = _recv_exact(sock, 4, prefix)
    if head is None or len(head) < 4:
        return None
    (n,) = _LEN.unpack(head)
    if n > MAX_MESSAGE:
        raise MalformedQuery(f"message of {n} bytes exceeds {MAX_MESSAGE}")
    body = _recv_exact(sock, n)
    if body is None or len(body) < n:
        return None
    return json.loads(body)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        first = self.request.recv(1)
        if not first:
            return
        if first[0] == frame_codec.START:
            self._frames(first)
        else:
            self._messages(first)

    def _frames(self, first: bytes):
        coord, clock = self.server.coordinator, self.server.clock
        pending = first
        while True:
            head = _recv_exact(self.request, 3, pending)
            pending = b""
            if head is None or len(head) < 3:
                return
            if head[0] != frame_codec.START:
                # resynchronise on the next delimiter
                pending = head[1:]
                continue
            length = (head[1] << 8) | head[2]
            rest = _recv_exact(self.request, length + 1)
            raw = head + (rest or b"")
            try:
                coord.ingest(raw, clock(), 0)
            except DtrmsError:
                pass
            if rest is None or len(rest) < length + 1:
                return

    def _messages(self, first: bytes):
        prefix = first
        while True:
            try:
                req = recv_msg(self.request, prefix)
            except (MalformedQuery, ValueError) as exc:
                send_msg(self.request, {"ok": False, "error": "MalformedQuery", "message": str(exc)})
                return
            prefix = b""
            if req is None:
                return
            reply = self.server.dispatch(req)
            send_msg(self.request, reply)
            if req == {"op": "shutdown"}:
                return


class CoordinatorServer(socketserver.ThreadingTCPServer):
    """Serve ``coordinator`` on ``address``; port 0 picks a free port."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address, coordinator, clock: Optional[Callable[[], float]] = None):
        self.coordinator = coordinator
        if clock is None:
            t0 = time.monotonic()
            clock = lambda: time.monotonic() - t0  # noqa: E731
        self.clock = clock
        super().__init__(address, _Handler)

    def dispatch(self, req) -> dict:
        coord = self.coordinator
        try:
            if not isinstance(req, dict):
                raise MalformedQuery("request must be a JSON object")
            op = req.get("op", "query")
            if op == "query":
                q = {k: v for k, v in req.items() if k != "op"}
                return {"ok": True, "result": coord.query(q)}
            if op == "ingest":
                try:
                    raw = bytes.fromhex(req["frame"])
                except (KeyError, TypeError, ValueError):
                    raise MalformedQuery("ingest needs a hex 'frame'") from None
                hops = req.get("hops", 0)
                if isinstance(hops, bool) or not isinstance(hops, int):
                    raise MalformedQuery("'hops' must be an integer")
                return {"ok": True, "result": coord.ingest(raw, self.clock(), hops).to_log()}
            if op == "shutdown":
                threading.Thread(target=self.shutdown, daemon=True).start()
                return {"ok": True, "result": None}
            raise MalformedQuery(f"unknown op {op!r}")
        except DtrmsError as exc:
            return {"ok": False, "error": type(exc).__name__, "message": str(exc)}

    def server_close(self):
        super().server_close()
        self.coordinator.flush()


def request(address, obj, timeout: float = 5.0):
    """One-shot client: send ``obj``, return the decoded reply."""
    with socket.create_connection(address, timeout=timeout) as sock:
        send_msg(sock, obj)
        return recv_msg(sock)


def send_frames(address, data: bytes, timeout: float = 5.0) -> None:
    with socket.create_connection(address, timeout=timeout) as sock:
        sock.sendall(data)
