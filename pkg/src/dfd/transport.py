"""Learner/worker wire protocol and transports.

Every frame starts with a 1-byte tag; all integers and floats are
little-endian.

=====  ==========  ==========================================================
tag    message     body
=====  ==========  ==========================================================
0x01   EvalMsg     u64 seed, f64 reward, u32 episode_len, u32 origin_update
0x02   PolicyMsg   u32 u, u32 count, count x f64 theta
0x03   Hello       u32 worker_id
0x04   Shutdown    (empty)
0x05   EsPairMsg   u64 seed, f64 reward_plus, f64 reward_minus,
                   u32 episode_len (both rollouts), u32 origin_update
=====  ==========  ==========================================================

EvalMsg frames are 25 bytes regardless of the policy dimension; the
perturbation travels as its seed. Frames are self-delimiting, so a stream is
just frames back to back.
"""

from __future__ import annotations

import logging
import socket
import struct
import threading
from collections import deque
from dataclasses import dataclass
from typing import Iterator, Union

import numpy as np

from .estimators import Evaluation

log = logging.getLogger(__name__)

TAG_EVAL = 0x01
TAG_POLICY = 0x02
TAG_HELLO = 0x03
TAG_SHUTDOWN = 0x04
TAG_ES_PAIR = 0x05

_EVAL = struct.Struct("<BQdII")
_POLICY_HEAD = struct.Struct("<BII")
_HELLO = struct.Struct("<BI")
_SHUTDOWN = struct.Struct("<B")
_ES_PAIR = struct.Struct("<BQddII")

U32_MAX = 2**32 - 1
U64_MAX = 2**64 - 1


class NeedMoreBytes(Exception):
    """The buffer ends before the frame does."""


class ProtocolError(ValueError):
    """Malformed stream; the connection should be dropped."""


class EncodeError(ValueError):
    pass


@dataclass(frozen=True)
class EvalMsg:
    seed: int
    reward: float
    episode_len: int
    origin_update: int

    @classmethod
    def from_evaluation(cls, ev: Evaluation) -> "EvalMsg":
        return cls(ev.seed, ev.reward, ev.episode_len, ev.origin_update)

    def to_evaluation(self) -> Evaluation:
        return Evaluation(self.seed, self.reward, self.episode_len, self.origin_update)


@dataclass(frozen=True)
class EsPairMsg:
    seed: int
    reward_plus: float
    reward_minus: float
    episode_len: int
    origin_update: int


@dataclass(frozen=True, eq=False)
class PolicyMsg:
    u: int
    theta: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, PolicyMsg):
            return NotImplemented
        a = np.ascontiguousarray(self.theta, dtype="<f8")
        b = np.ascontiguousarray(other.theta, dtype="<f8")
        return self.u == other.u and a.shape == b.shape and a.tobytes() == b.tobytes()


@dataclass(frozen=True)
class Hello:
    worker_id: int


@dataclass(frozen=True)
class Shutdown:
    pass


WireMessage = Union[EvalMsg, EsPairMsg, PolicyMsg, Hello, Shutdown]


def _check_range(name, value, hi):
    if not 0 <= value <= hi:
        raise EncodeError(f"{name}={value} out of range [0, {hi}]")


def encode(m: WireMessage) -> bytes:
    if isinstance(m, EvalMsg):
        _check_range("seed", m.seed, U64_MAX)
        _check_range("episode_len", m.episode_len, U32_MAX)
        _check_range("origin_update", m.origin_update, U32_MAX)
        return _EVAL.pack(TAG_EVAL, m.seed, m.reward, m.episode_len, m.origin_update)
    if isinstance(m, PolicyMsg):
        theta = np.ascontiguousarray(m.theta, dtype="<f8")
        if theta.ndim != 1:
            raise EncodeError("policy parameters must be a 1-D vector")
        _check_range("u", m.u, U32_MAX)
        _check_range("count", theta.size, U32_MAX)
        return _POLICY_HEAD.pack(TAG_POLICY, m.u, theta.size) + theta.tobytes()
    if isinstance(m, Hello):
        _check_range("worker_id", m.worker_id, U32_MAX)
        return _HELLO.pack(TAG_HELLO, m.worker_id)
    if isinstance(m, Shutdown):
        return _SHUTDOWN.pack(TAG_SHUTDOWN)
    if isinstance(m, EsPairMsg):
        _check_range("seed", m.seed, U64_MAX)
        _check_range("episode_len", m.episode_len, U32_MAX)
        _check_range("origin_update", m.origin_update, U32_MAX)
        return _ES_PAIR.pack(TAG_ES_PAIR, m.seed, m.reward_plus, m.reward_minus,
                             m.episode_len, m.origin_update)
    raise EncodeError(f"cannot encode {type(m).__name__}")


def decode_frame(buf, offset: int = 0) -> tuple[WireMessage, int]:
    """Decode one frame starting at ``offset``; return it and the end offset."""
    view = memoryview(buf)
    if len(view) - offset < 1:
        raise NeedMoreBytes(1)
    tag = view[offset]

    def need(struct_):
        if len(view) - offset < struct_.size:
            raise NeedMoreBytes(struct_.size - (len(view) - offset))
        return struct_.unpack_from(view, offset), offset + struct_.size

    if tag == TAG_EVAL:
        (_, seed, reward, length, origin), end = need(_EVAL)
        return EvalMsg(seed, reward, length, origin), end
    if tag == TAG_POLICY:
        (_, u, count), start = need(_POLICY_HEAD)
        end = start + 8 * count
        if len(view) < end:
            raise NeedMoreBytes(end - len(view))
        theta = np.frombuffer(view[start:end], dtype="<f8").astype(np.float64)
        return PolicyMsg(u, theta), end
    if tag == TAG_HELLO:
        (_, wid), end = need(_HELLO)
        return Hello(wid), end
    if tag == TAG_SHUTDOWN:
        return Shutdown(), offset + 1
    if tag == TAG_ES_PAIR:
        (_, seed, rp, rm, length, origin), end = need(_ES_PAIR)
        return EsPairMsg(seed, rp, rm, length, origin), end
    raise ProtocolError(f"unknown message tag 0x{tag:02x}")


def decode(data: bytes) -> WireMessage:
    """Decode exactly one complete frame."""
    msg, end = decode_frame(data)
    if end != len(data):
        raise ProtocolError(f"{len(data) - end} trailing bytes after frame")
    return msg


class FrameDecoder:
    """Incremental decoder for a byte stream split at arbitrary points."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, chunk: bytes) -> list[WireMessage]:
        self._buf += chunk
        out, pos = [], 0
        while True:
            try:
                msg, pos2 = decode_frame(self._buf, pos)
            except NeedMoreBytes:
                break
            out.append(msg)
            pos = pos2
        del self._buf[:pos]
        return out

    @property
    def pending(self) -> int:
        return len(self._buf)


class LoopbackChannel:
    """One-directional in-process byte pipe carrying encoded frames."""

    def __init__(self):
        self._chunks: deque[bytes] = deque()
        self._decoder = FrameDecoder()
        self.bytes_sent = 0

    def send(self, m: WireMessage) -> None:
        data = encode(m)
        self.bytes_sent += len(data)
        self._chunks.append(data)

    def receive(self) -> list[WireMessage]:
        out = []
        while self._chunks:
            out.extend(self._decoder.feed(self._chunks.popleft()))
        return out


class SocketConnection:
    """Framed messages over a connected stream socket."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self._decoder = FrameDecoder()
        self._pending: deque[WireMessage] = deque()
        self._send_lock = threading.Lock()
        self.closed = False

    @classmethod
    def connect(cls, host: str, port: int, timeout: float | None = 10.0) -> "SocketConnection":
        sock = socket.create_connection((host, port), timeout=timeout)
        sock.settimeout(None)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return cls(sock)

    def send(self, m: WireMessage) -> None:
        data = encode(m)
        with self._send_lock:
            self.sock.sendall(data)

    def recv(self, timeout: float | None = None) -> WireMessage | None:
        """Next message; ``None`` on timeout. Raises ``ConnectionError`` on EOF."""
        while not self._pending:
            self.sock.settimeout(timeout)
            try:
                chunk = self.sock.recv(65536)
            except socket.timeout:
                return None
            finally:
                if not self.closed:
                    self.sock.settimeout(None)
            if not chunk:
                self.closed = True
                raise ConnectionError("peer closed connection")
            self._pending.extend(self._decoder.feed(chunk))
        return self._pending.popleft()

    def messages(self) -> Iterator[WireMessage]:
        try:
            while True:
                yield self.recv()
        except (ConnectionError, OSError):
            return

    def close(self) -> None:
        self.closed = True
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()
