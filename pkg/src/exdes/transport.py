"""Transports carrying one request frame and one response frame.

The agent only ever sees this interface, so tests exercise delivery
semantics with in-process and fault-injecting transports while production
runs use TCP. Frames are self-delimiting (header carries the payload
length), no extra on-wire framing is needed.
"""

from __future__ import annotations

import socket

from .errors import TransportDown
from .wire import HEADER, HEADER_LEN, MAX_PAYLOAD, TRAILER_LEN


def recv_frame(sock) -> bytes:
    """Read exactly one frame off a socket; b"" on clean EOF at a boundary."""
    header = _recv_exact(sock, HEADER_LEN, allow_eof=True)
    if not header:
        return b""
    _, _, _, _, _, payload_len = HEADER.unpack(header)
    if payload_len > MAX_PAYLOAD:
        raise TransportDown(f"peer declared payload of {payload_len} bytes")
    return header + _recv_exact(sock, payload_len + TRAILER_LEN)


def _recv_exact(sock, n: int, allow_eof: bool = False) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        try:
            chunk = sock.recv(remaining)
        except OSError as exc:
            raise TransportDown(str(exc)) from exc
        if not chunk:
            if allow_eof and remaining == n:
                return b""
            raise TransportDown("connection closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


class TcpTransport:
    """Client side of the agent/collector link, one lazy connection."""

    def __init__(self, host: str, port: int, timeout_s: float = 10.0):
        self.host = host
        self.port = port
        self.timeout_s = timeout_s
        self._sock = None

    def request(self, frame: bytes) -> bytes:
        try:
            if self._sock is None:
                self._sock = socket.create_connection(
                    (self.host, self.port), timeout=self.timeout_s)
            self._sock.sendall(frame)
            response = recv_frame(self._sock)
        except (OSError, TransportDown) as exc:
            self.close()
            raise TransportDown(str(exc)) from exc
        if not response:
            self.close()
            raise TransportDown("connection closed by collector")
        return response

    def close(self):
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None


class DirectTransport:
    """In-process transport calling a collector's frame handler directly."""

    def __init__(self, handler):
        self._handler = handler

    def request(self, frame: bytes) -> bytes:
        response = self._handler(frame)
        if response is None:
            raise TransportDown("collector rejected the frame")
        return response


class FlakyTransport:
    """Deterministic fault injector for delivery-contract tests.

    `plan` yields one of "ok", "drop_request" (frame never reaches the
    collector) or "drop_response" (the collector processes the frame but the
    reply is lost) per request; after the plan is exhausted requests succeed.
    """

    def __init__(self, inner, plan):
        self.inner = inner
        self._plan = iter(plan)
        self.requests = 0

    def request(self, frame: bytes) -> bytes:
        self.requests += 1
        action = next(self._plan, "ok")
        if action == "drop_request":
            raise TransportDown("injected: request lost")
        response = self.inner.request(frame)
        if action == "drop_response":
            raise TransportDown("injected: response lost")
        return response
