"""In-process and TCP pub-sub bus for timestamped raw messages.

Topics are "/"-separated paths; subscriptions use glob patterns where "*"
matches exactly one segment. Delivery is exactly-once in process, at-least-
once across TCP (the recorder deduplicates by (topic, source, seq)).
Each subscriber owns a bounded queue; overflow drops the oldest message and
bumps a per-topic counter that surfaces in recorder QA.
"""

from __future__ import annotations

import base64
import json
import socket
import socketserver
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass, field

from .errors import BusClosed, InvalidPattern, TimestampRegression
from .frames import validate_topic

DEFAULT_QUEUE_MAXLEN = 4096


@dataclass(frozen=True)
class RawMessage:
    """A pre-translation message: opaque payload plus bus bookkeeping."""

    topic: str
    source_id: str
    seq: int
    t_ns: int
    payload: bytes

    def envelope(self) -> bytes:
        obj = {
            "topic": self.topic,
            "source_id": self.source_id,
            "seq": self.seq,
            "t_ns": self.t_ns,
            "payload_b64": base64.b64encode(self.payload).decode("ascii"),
        }
        return json.dumps(obj, separators=(",", ":")).encode("utf-8")

    @classmethod
    def from_envelope(cls, raw: bytes) -> "RawMessage":
        obj = json.loads(raw.decode("utf-8"))
        return cls(
            topic=obj["topic"],
            source_id=obj["source_id"],
            seq=int(obj["seq"]),
            t_ns=int(obj["t_ns"]),
            payload=base64.b64decode(obj["payload_b64"]),
        )


def validate_pattern(pattern: str) -> list[str]:
    if not isinstance(pattern, str) or not pattern:
        raise InvalidPattern(f"empty pattern: {pattern!r}")
    if any(ch.isspace() for ch in pattern):
        raise InvalidPattern(f"pattern contains whitespace: {pattern!r}")
    segments = pattern.split("/")
    for seg in segments:
        if not seg:
            raise InvalidPattern(f"pattern has empty segment: {pattern!r}")
        if "*" in seg and seg != "*":
            raise InvalidPattern(f"'*' must be a whole segment: {pattern!r}")
    return segments


def pattern_matches(segments: list[str], topic: str) -> bool:
    parts = topic.split("/")
    if len(parts) != len(segments):
        return False
    return all(s == "*" or s == p for s, p in zip(segments, parts))


class Subscription:
    """One consumer's view of matching messages. Owned by a single consumer."""

    def __init__(self, bus: "Bus", pattern: str, maxlen: int):
        self._bus = bus
        self.pattern = pattern
        self._segments = validate_pattern(pattern)
        self._queue: deque[RawMessage] = deque(maxlen=maxlen)
        self._dropped: dict[str, int] = {}
        self._cond = threading.Condition()
        self._closed = False

    def _deliver(self, msg: RawMessage):
        with self._cond:
            if self._closed:
                return
            if self._queue.maxlen is not None and len(self._queue) == self._queue.maxlen:
                oldest = self._queue.popleft()
                self._dropped[oldest.topic] = self._dropped.get(oldest.topic, 0) + 1
            self._queue.append(msg)
            self._cond.notify_all()

    def matches(self, topic: str) -> bool:
        return pattern_matches(self._segments, topic)

    @property
    def dropped(self) -> dict[str, int]:
        """Per-topic count of messages lost to queue overflow."""
        with self._cond:
            return dict(self._dropped)

    def pop_all(self) -> list[RawMessage]:
        with self._cond:
            out = list(self._queue)
            self._queue.clear()
            return out

    def drain(self, deadline: float | None = None) -> list[RawMessage]:
        """Return every message delivered before ``deadline`` (monotonic
        seconds; None means "whatever is queued now")."""
        if deadline is None:
            return self.pop_all()
        out = []
        while True:
            remaining = deadline - time.monotonic()
            with self._cond:
                out.extend(self._queue)
                self._queue.clear()
                if remaining <= 0 or self._closed:
                    return out
                self._cond.wait(timeout=remaining)

    def close(self):
        with self._cond:
            self._closed = True
            self._cond.notify_all()
        self._bus._remove(self)


class Bus:
    """Thread-safe topic bus. Sequence numbers are assigned per
    (topic, source); timestamps must be non-decreasing per source."""

    def __init__(self):
        self._lock = threading.Lock()
        self._subs: list[Subscription] = []
        self._seq: dict[tuple[str, str], int] = {}
        self._last_t: dict[str, int] = {}
        self._closed = False

    def publish(self, topic: str, source_id: str, t_ns: int, payload: bytes) -> int:
        """Publish a new message; returns the assigned sequence number."""
        validate_topic(topic)
        t_ns = int(t_ns)
        with self._lock:
            if self._closed:
                raise BusClosed("bus is shut down")
            last = self._last_t.get(source_id)
            if last is not None and t_ns < last:
                raise TimestampRegression(
                    f"source {source_id!r}: t_ns {t_ns} < previous {last}"
                )
            self._last_t[source_id] = t_ns
            key = (topic, source_id)
            seq = self._seq.get(key, 0)
            self._seq[key] = seq + 1
            msg = RawMessage(topic, source_id, seq, t_ns, bytes(payload))
            subs = [s for s in self._subs if s.matches(topic)]
        for s in subs:
            s._deliver(msg)
        return seq

    def inject(self, msg: RawMessage) -> None:
        """Deliver a message that already carries its origin-assigned seq
        (TCP transport path; duplicates are allowed and resolved downstream)."""
        validate_topic(msg.topic)
        with self._lock:
            if self._closed:
                raise BusClosed("bus is shut down")
            key = (msg.topic, msg.source_id)
            self._seq[key] = max(self._seq.get(key, 0), msg.seq + 1)
            last = self._last_t.get(msg.source_id)
            if last is None or msg.t_ns > last:
                self._last_t[msg.source_id] = msg.t_ns
            subs = [s for s in self._subs if s.matches(msg.topic)]
        for s in subs:
            s._deliver(msg)

    def subscribe(self, pattern: str, maxlen: int = DEFAULT_QUEUE_MAXLEN) -> Subscription:
        sub = Subscription(self, pattern, maxlen)
        with self._lock:
            if self._closed:
                raise BusClosed("bus is shut down")
            self._subs.append(sub)
        return sub

    def _remove(self, sub: Subscription):
        with self._lock:
            if sub in self._subs:
                self._subs.remove(sub)

    def shutdown(self):
        """Idempotent; unblocks all waiting drains."""
        with self._lock:
            if self._closed:
                return
            self._closed = True
            subs = list(self._subs)
        for s in subs:
            with s._cond:
                s._closed = True
                s._cond.notify_all()


def drain(sub: Subscription, deadline: float | None = None) -> list[RawMessage]:
    return sub.drain(deadline)


# --- TCP transport ---
#
# Framing matches the model bridge: 4-byte big-endian length prefix followed
# by a UTF-8 JSON body. The first frame on a connection is a control message
# {"op": "publish"} or {"op": "subscribe", "pattern": ...}; every later frame
# is a RawMessage envelope.

MAX_FRAME_BYTES = 16 * 1024 * 1024


def write_frame(sock: socket.socket, body: bytes) -> None:
    if len(body) > MAX_FRAME_BYTES:
        raise ValueError(f"frame body {len(body)} exceeds {MAX_FRAME_BYTES}")
    sock.sendall(struct.pack(">I", len(body)) + body)


def read_frame(sock: socket.socket) -> bytes | None:
    header = _read_exact(sock, 4)
    if header is None:
        return None
    (length,) = struct.unpack(">I", header)
    if length > MAX_FRAME_BYTES:
        raise ValueError(f"frame body {length} exceeds {MAX_FRAME_BYTES}")
    body = _read_exact(sock, length)
    if body is None:
        return None
    return body


def _read_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


class _BusConnHandler(socketserver.BaseRequestHandler):
    def handle(self):
        bus: Bus = self.server.bus  # type: ignore[attr-defined]
        first = read_frame(self.request)
        if first is None:
            return
        ctrl = json.loads(first.decode("utf-8"))
        if ctrl.get("op") == "publish":
            while True:
                body = read_frame(self.request)
                if body is None:
                    return
                try:
                    bus.inject(RawMessage.from_envelope(body))
                except BusClosed:
                    return
        elif ctrl.get("op") == "subscribe":
            sub = bus.subscribe(ctrl["pattern"])
            try:
                while not self.server.stopping.is_set():  # type: ignore[attr-defined]
                    for msg in sub.drain(time.monotonic() + 0.05):
                        write_frame(self.request, msg.envelope())
            except (BrokenPipeError, ConnectionResetError, OSError):
                pass
            finally:
                sub.close()


class BusServer:
    """Exposes a local bus over TCP. One thread per connection."""

    def __init__(self, bus: Bus, addr: tuple[str, int] = ("127.0.0.1", 0)):
        self._server = socketserver.ThreadingTCPServer(addr, _BusConnHandler, bind_and_activate=True)
        self._server.daemon_threads = True
        self._server.bus = bus  # type: ignore[attr-defined]
        self._server.stopping = threading.Event()  # type: ignore[attr-defined]
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    @property
    def addr(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    def close(self):
        self._server.stopping.set()  # type: ignore[attr-defined]
        self._server.shutdown()
        self._server.server_close()


class TcpPublisher:
    """Publishes envelopes into a remote bus; resend-safe (at-least-once)."""

    def __init__(self, addr: tuple[str, int]):
        self._sock = socket.create_connection(addr, timeout=5.0)
        write_frame(self._sock, json.dumps({"op": "publish"}).encode("utf-8"))

    def send(self, msg: RawMessage) -> None:
        write_frame(self._sock, msg.envelope())

    def close(self):
        try:
            self._sock.close()
        except OSError:
            pass


class TcpSubscriber:
    """Receives matching envelopes from a remote bus."""

    def __init__(self, addr: tuple[str, int], pattern: str):
        validate_pattern(pattern)
        self._sock = socket.create_connection(addr, timeout=5.0)
        write_frame(self._sock, json.dumps({"op": "subscribe", "pattern": pattern}).encode("utf-8"))

    def recv(self, timeout: float = 5.0) -> RawMessage | None:
        self._sock.settimeout(timeout)
        try:
            body = read_frame(self._sock)
        except socket.timeout:
            return None
        if body is None:
            return None
        return RawMessage.from_envelope(body)

    def close(self):
        try:
            self._sock.close()
        except OSError:
            pass
