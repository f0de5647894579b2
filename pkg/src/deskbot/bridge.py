"""Model-bridge wire protocol: serve a checkpoint over TCP and drive any
conforming server from the evaluation harness.

Protocol "coin.bridge.v1". Every message is framed as a 4-byte big-endian
body length followed by a UTF-8 JSON object with a "type" key:

    hello      client -> server   {protocol, obs_fields?, action_dim?, T_o?, T_p?, T_a?}
    hello_ack  server -> client   {accept, reason, spec}
    infer      client -> server   {obs, seed, steps?}
    action     server -> client   {chunk}
    error      server -> client   {reason}
    bye        client -> server   {}

The client may send its expected model spec inside hello; the server rejects
on any mismatch with the loaded checkpoint. A bare hello (protocol only) is
accepted and the client adopts the spec carried in hello_ack. Observations
and chunks travel as nested float lists; field flattening order is the field
names sorted lexicographically, each field C-order. Frame bodies above 16
MiB are refused on both sides. docs/protocol.md pins the byte-level format
with golden frames.
"""

from __future__ import annotations

import json
import os
import socket
import socketserver
import struct
import threading

import numpy as np

from .errors import (BindError, BridgeTimeout, EndpointUnavailable,
                     FrameTooLarge, HandshakeRejected)
from .policy import load_checkpoint, policy_from_checkpoint
from .policy.dataset import ObsLayout

PROTOCOL = "coin.bridge.v1"
MAX_FRAME = 16 * 1024 * 1024
DEFAULT_ADDR = "127.0.0.1:7447"
ADDR_ENV = "COIN_BRIDGE_ADDR"

__all__ = [
    "PROTOCOL", "MAX_FRAME", "DEFAULT_ADDR", "ADDR_ENV",
    "encode_frame", "decode_frame", "read_frame", "write_frame",
    "spec_of", "serve_builtin", "BridgeServer", "remote_policy",
    "RemotePolicy", "golden_frames",
]


# --- framing ---

def encode_frame(obj: dict) -> bytes:
    """Canonical frame bytes: length prefix + sorted-key compact JSON."""
    body = json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      allow_nan=False).encode("utf-8")
    if len(body) > MAX_FRAME:
        raise FrameTooLarge(f"frame body {len(body)} bytes exceeds {MAX_FRAME}")
    return struct.pack(">I", len(body)) + body


def decode_frame(buf: bytes) -> tuple[dict, bytes]:
    """Parse one frame off the front of buf; returns (message, remainder)."""
    if len(buf) < 4:
        raise ValueError("short frame: missing length prefix")
    n = struct.unpack(">I", buf[:4])[0]
    if n > MAX_FRAME:
        raise FrameTooLarge(f"declared frame length {n} exceeds {MAX_FRAME}")
    if len(buf) < 4 + n:
        raise ValueError(f"short frame: declared {n}, have {len(buf) - 4}")
    obj = json.loads(buf[4:4 + n].decode("utf-8"))
    if not isinstance(obj, dict) or "type" not in obj:
        raise ValueError("frame body must be an object with a 'type' key")
    return obj, buf[4 + n:]


def _recv_exact(sock, n: int) -> bytes:
    chunks = []
    while n > 0:
        part = sock.recv(min(n, 65536))
        if not part:
            raise ConnectionError("connection closed mid-frame")
        chunks.append(part)
        n -= len(part)
    return b"".join(chunks)


def read_frame(sock) -> dict:
    head = _recv_exact(sock, 4)
    n = struct.unpack(">I", head)[0]
    if n > MAX_FRAME:
        raise FrameTooLarge(f"declared frame length {n} exceeds {MAX_FRAME}")
    obj = json.loads(_recv_exact(sock, n).decode("utf-8"))
    if not isinstance(obj, dict) or "type" not in obj:
        raise ValueError("frame body must be an object with a 'type' key")
    return obj


def write_frame(sock, obj: dict):
    sock.sendall(encode_frame(obj))


def _parse_addr(addr) -> tuple[str, int]:
    if addr is None:
        addr = os.environ.get(ADDR_ENV, DEFAULT_ADDR)
    if isinstance(addr, (tuple, list)):
        return str(addr[0]), int(addr[1])
    host, _, port = str(addr).rpartition(":")
    if not host:
        raise ValueError(f"address must be host:port, got {addr!r}")
    return host, int(port)


# --- server side ---

def spec_of(policy) -> dict:
    """Handshake model spec for a loaded policy."""
    return {
        "obs_fields": policy.layout_.to_json(),
        "action_dim": policy.action_dim_,
        "T_o": policy.T_o,
        "T_p": policy.T_p,
        "T_a": policy.T_a,
    }


_SPEC_KEYS = ("obs_fields", "action_dim", "T_o", "T_p", "T_a")


def _spec_conflict(hello: dict, spec: dict) -> str | None:
    if hello.get("protocol") != PROTOCOL:
        return f"protocol must be {PROTOCOL!r}"
    for key in _SPEC_KEYS:
        if key in hello and hello[key] != spec[key]:
            return f"{key} mismatch: client {hello[key]!r}, server {spec[key]!r}"
    return None


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        policy = self.server.policy
        spec = self.server.spec
        accepted = False
        while True:
            try:
                msg = read_frame(self.request)
            except (ConnectionError, OSError):
                return
            except FrameTooLarge as e:
                try:
                    write_frame(self.request, {"type": "error", "reason": str(e)})
                except OSError:
                    pass
                return      # cannot resync after an oversize frame
            except ValueError as e:
                try:
                    write_frame(self.request, {"type": "error", "reason": str(e)})
                except OSError:
                    return
                continue
            kind = msg.get("type")
            if kind == "bye":
                return
            if kind == "hello":
                reason = _spec_conflict(msg, spec)
                if reason is None:
                    accepted = True
                    write_frame(self.request, {"type": "hello_ack", "accept": True,
                                               "reason": "", "spec": spec})
                else:
                    write_frame(self.request, {"type": "hello_ack", "accept": False,
                                               "reason": reason, "spec": spec})
                continue
            if kind == "infer":
                if not accepted:
                    write_frame(self.request,
                                {"type": "error", "reason": "infer before hello"})
                    continue
                try:
                    obs = np.asarray(msg["obs"], dtype=np.float32)
                    chunk = policy.sample_chunk(obs, seed=int(msg["seed"]),
                                                steps=msg.get("steps"))
                    write_frame(self.request, {
                        "type": "action",
                        "chunk": [[float(v) for v in row] for row in np.asarray(chunk)],
                    })
                except Exception as e:     # noqa: BLE001 - report, keep serving
                    write_frame(self.request, {"type": "error", "reason": str(e)})
                continue
            write_frame(self.request,
                        {"type": "error", "reason": f"unknown message type {kind!r}"})


class BridgeServer:
    """Running bridge server; context manager, one thread per connection."""

    def __init__(self, policy, host: str, port: int):
        class _TCP(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        try:
            self._srv = _TCP((host, port), _Handler)
        except OSError as e:
            raise BindError(f"cannot bind {host}:{port}: {e}") from e
        self._srv.policy = policy
        self._srv.spec = spec_of(policy)
        self._thread = threading.Thread(target=self._srv.serve_forever,
                                        daemon=True)
        self._thread.start()

    @property
    def addr(self) -> str:
        host, port = self._srv.server_address[:2]
        return f"{host}:{port}"

    def close(self):
        self._srv.shutdown()
        self._srv.server_close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve_builtin(ckpt, addr=None) -> BridgeServer:
    """Serve a checkpoint (path or loaded dict/policy) at host:port."""
    if hasattr(ckpt, "sample_chunk"):
        policy = ckpt
    elif isinstance(ckpt, dict):
        policy = policy_from_checkpoint(ckpt)
    else:
        policy = load_checkpoint(ckpt)
    host, port = _parse_addr(addr)
    return BridgeServer(policy, host, port)


# --- client side ---

class RemotePolicy:
    """Socket-backed endpoint with the local policy surface.

    One infer round-trip per sample_chunk call; a dead or silent server
    surfaces as EndpointUnavailable so rollouts can flag partial reports.
    """

    def __init__(self, addr=None, timeout: float = 5.0, expect: dict | None = None):
        host, port = _parse_addr(addr)
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except socket.timeout as e:
            raise BridgeTimeout(f"connect to {host}:{port} timed out") from e
        except OSError as e:
            raise EndpointUnavailable(f"cannot connect to {host}:{port}: {e}") from e
        self._sock.settimeout(timeout)
        hello = {"type": "hello", "protocol": PROTOCOL}
        if expect:
            hello.update(expect)
        try:
            write_frame(self._sock, hello)
            ack = read_frame(self._sock)
        except socket.timeout as e:
            raise BridgeTimeout("handshake timed out") from e
        except (ConnectionError, OSError) as e:
            raise EndpointUnavailable(f"handshake failed: {e}") from e
        if ack.get("type") != "hello_ack" or "spec" not in ack:
            raise HandshakeRejected(f"unexpected handshake reply: {ack}")
        if not ack.get("accept"):
            raise HandshakeRejected(ack.get("reason", "rejected"))
        spec = ack["spec"]
        self.layout_ = ObsLayout.from_json(spec["obs_fields"])
        self.action_dim_ = int(spec["action_dim"])
        self.T_o = int(spec["T_o"])
        self.T_p = int(spec["T_p"])
        self.T_a = int(spec["T_a"])

    def sample_chunk(self, obs_window, seed: int = 0, steps: int | None = None):
        msg = {"type": "infer",
               "obs": [[float(v) for v in row] for row in np.asarray(obs_window)],
               "seed": int(seed)}
        if steps is not None:
            msg["steps"] = int(steps)
        try:
            write_frame(self._sock, msg)
            reply = read_frame(self._sock)
        except FrameTooLarge:
            raise
        except socket.timeout as e:
            raise EndpointUnavailable("infer timed out") from e
        except (ConnectionError, OSError, ValueError) as e:
            raise EndpointUnavailable(f"infer failed: {e}") from e
        if reply.get("type") == "error":
            raise EndpointUnavailable(f"server error: {reply.get('reason')}")
        if reply.get("type") != "action":
            raise EndpointUnavailable(f"unexpected reply type {reply.get('type')!r}")
        chunk = np.asarray(reply["chunk"], dtype=np.float32)
        if chunk.shape != (self.T_p, self.action_dim_):
            raise EndpointUnavailable(
                f"chunk shape {chunk.shape} != ({self.T_p}, {self.action_dim_})")
        return chunk

    def close(self):
        try:
            write_frame(self._sock, {"type": "bye"})
        except OSError:
            pass
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def remote_policy(addr=None, timeout: float = 5.0,
                  expect: dict | None = None) -> RemotePolicy:
    """Connect and handshake; the returned endpoint plugs into evalkit."""
    return RemotePolicy(addr, timeout=timeout, expect=expect)


# --- cross-language conformance goldens ---

_GOLDEN_SPEC = {
    "obs_fields": {"x": {"dtype": "f32", "shape": [2]}},
    "action_dim": 1,
    "T_o": 2,
    "T_p": 2,
    "T_a": 1,
}


def golden_frames() -> dict[str, bytes]:
    """Reference byte sequences for every message type.

    Documented in docs/protocol.md; any conforming implementation must
    produce these exact bytes for the same logical messages.
    """
    hello = {"type": "hello", "protocol": PROTOCOL, **_GOLDEN_SPEC}
    return {
        "hello": encode_frame(hello),
        "hello_ack": encode_frame({"type": "hello_ack", "accept": True,
                                   "reason": "", "spec": _GOLDEN_SPEC}),
        "infer": encode_frame({"type": "infer",
                               "obs": [[0.0, 1.0], [0.5, -0.5]], "seed": 7}),
        "action": encode_frame({"type": "action", "chunk": [[0.25], [-0.25]]}),
        "error": encode_frame({"type": "error", "reason": "busy"}),
        "bye": encode_frame({"type": "bye"}),
    }
