"""Collective message passing between workers.

Two interchangeable backings implement the same interface: in-process
bounded queues (the default, used by all tests and single-machine runs)
and TCP loopback sockets (one stream per src/dst channel, demonstrating
distributed-memory viability).

Semantics shared by both backings:

- per (src, dst) channel delivery is FIFO with no loss or duplication;
- senders block when a channel is full (backpressure, never drop);
- ``gather`` returns payloads ordered by source rank regardless of
  arrival order;
- operations on a retired peer raise :class:`DeadWorker`;
- ``request_stop`` wakes every blocked operation with
  :class:`TransportStopped` so shutdown never hangs.
"""

from __future__ import annotations

import socket
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Callable, Iterable, Sequence

from .errors import DeadWorker, LengthMismatch, TransportStopped

DEFAULT_CHANNEL_CAPACITY = 1024


class Kernel(Enum):
    PREDICTION = "prediction"
    GENERATOR = "generator"
    ORACLE = "oracle"
    TRAINING = "training"
    MANAGER = "manager"
    EXCHANGE = "exchange"


@dataclass(frozen=True, order=True)
class WorkerId:
    """A worker's address: its kernel plus its rank within that kernel."""

    kernel: Kernel
    rank: int

    def __str__(self) -> str:
        return f"{self.kernel.value}:{self.rank}"


MANAGER = WorkerId(Kernel.MANAGER, 0)
EXCHANGE = WorkerId(Kernel.EXCHANGE, 0)


class Tag(IntEnum):
    DATA = 0
    SIGNAL = 1
    WEIGHTS = 2
    SIZE_HANDSHAKE = 3


@dataclass(frozen=True)
class Envelope:
    src: WorkerId
    dst: WorkerId
    tag: Tag
    payload: bytes

    def __post_init__(self):
        if self.tag != Tag.SIGNAL and not self.payload:
            raise ValueError(f"{self.tag.name} envelope must carry a payload")


class _Endpoint:
    """Receive side of one worker: a FIFO deque per source channel."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.lock = threading.Lock()
        self.cond = threading.Condition(self.lock)
        self.channels: dict[WorkerId, deque[Envelope]] = {}
        # round-robin cursor so recv_any does not starve late sources
        self.scan_order: list[WorkerId] = []


class Transport:
    """Interface and shared bookkeeping for both backings.

    A single worker never issues two concurrent operations; distinct
    workers may call into the transport concurrently.
    """

    def __init__(self, capacity: int = DEFAULT_CHANNEL_CAPACITY, trace: bool = False):
        self.capacity = capacity
        self._endpoints: dict[WorkerId, _Endpoint] = {}
        self._dead: set[WorkerId] = set()
        self._stop = False
        self._global_lock = threading.Lock()
        self._trace_lock = threading.Lock()
        self.trace: list[tuple[WorkerId, WorkerId, Tag]] | None = [] if trace else None

    # -- lifecycle ------------------------------------------------------

    def register(self, worker: WorkerId) -> None:
        with self._global_lock:
            if worker in self._endpoints:
                raise ValueError(f"{worker} already registered")
            self._endpoints[worker] = _Endpoint(self.capacity)

    def retire(self, worker: WorkerId) -> None:
        """Mark a worker dead; blocked peers observe :class:`DeadWorker`."""
        with self._global_lock:
            self._dead.add(worker)
            endpoints = list(self._endpoints.values())
        for ep in endpoints:
            with ep.cond:
                ep.cond.notify_all()

    def request_stop(self) -> None:
        """Wake every blocked operation with :class:`TransportStopped`."""
        with self._global_lock:
            self._stop = True
            endpoints = list(self._endpoints.values())
        for ep in endpoints:
            with ep.cond:
                ep.cond.notify_all()

    def close(self) -> None:
        self.request_stop()

    def is_dead(self, worker: WorkerId) -> bool:
        with self._global_lock:
            return worker in self._dead

    def workers(self) -> list[WorkerId]:
        with self._global_lock:
            return list(self._endpoints)

    def _endpoint(self, worker: WorkerId) -> _Endpoint:
        try:
            return self._endpoints[worker]
        except KeyError:
            raise DeadWorker(worker) from None

    def _record(self, env: Envelope) -> None:
        if self.trace is not None:
            with self._trace_lock:
                self.trace.append((env.src, env.dst, env.tag))

    # -- delivery into a mailbox (shared by both backings) ---------------

    def _deliver(self, env: Envelope, block: bool = True) -> None:
        ep = self._endpoint(env.dst)
        with ep.cond:
            chan = ep.channels.get(env.src)
            if chan is None:
                chan = ep.channels[env.src] = deque()
                ep.scan_order.append(env.src)
            while len(chan) >= ep.capacity:
                if not block:
                    raise RuntimeError("channel full")
                if self._stop:
                    raise TransportStopped(f"stopped while sending {env.src}->{env.dst}")
                if env.dst in self._dead:
                    raise DeadWorker(env.dst)
                ep.cond.wait(0.1)
            chan.append(env)
            ep.cond.notify_all()

    # -- point to point ---------------------------------------------------

    def send(self, src: WorkerId, dst: WorkerId, tag: Tag, payload: bytes) -> None:
        raise NotImplementedError

    def recv(self, dst: WorkerId, src: WorkerId, timeout: float | None = None) -> Envelope | None:
        """Blocking receive from one source. Returns None only on timeout."""
        ep = self._endpoint(dst)
        deadline = None if timeout is None else time.monotonic() + timeout
        with ep.cond:
            while True:
                chan = ep.channels.get(src)
                if chan:
                    env = chan.popleft()
                    ep.cond.notify_all()
                    return env
                if self._stop:
                    raise TransportStopped(f"stopped while receiving {src}->{dst}")
                if src in self._dead:
                    raise DeadWorker(src)
                if deadline is None:
                    ep.cond.wait(0.5)
                else:
                    remaining = deadline - time.monotonic()
                    if remaining <= 0:
                        return None
                    ep.cond.wait(remaining)

    def recv_any(
        self,
        dst: WorkerId,
        timeout: float | None = None,
        accept: Callable[[Envelope], bool] | None = None,
    ) -> Envelope | None:
        """Receive the next message from any source, round-robin across channels.

        ``accept`` lets the caller leave specific messages queued (e.g. the
        manager defers oracle requests while its buffer is full); a deferred
        message stays at the head of its channel in FIFO position.
        """
        ep = self._endpoint(dst)
        deadline = None if timeout is None else time.monotonic() + timeout
        with ep.cond:
            while True:
                order = ep.scan_order
                for i in range(len(order)):
                    src = order[i]
                    chan = ep.channels.get(src)
                    if chan and (accept is None or accept(chan[0])):
                        env = chan.popleft()
                        # rotate so the next scan starts after this source
                        ep.scan_order = order[i + 1:] + order[: i + 1]
                        ep.cond.notify_all()
                        return env
                if self._stop:
                    raise TransportStopped(f"stopped while receiving any->{dst}")
                if deadline is None:
                    ep.cond.wait(0.5)
                else:
                    remaining = deadline - time.monotonic()
                    if remaining <= 0:
                        return None
                    ep.cond.wait(remaining)

    def probe(self, dst: WorkerId, src: WorkerId) -> bool:
        """Non-blocking: is a message from ``src`` deliverable right now?"""
        ep = self._endpoint(dst)
        with ep.cond:
            chan = ep.channels.get(src)
            return bool(chan)

    # -- collectives ------------------------------------------------------

    def broadcast(
        self, src: WorkerId, payload: bytes, dst_set: Sequence[WorkerId], tag: Tag = Tag.DATA
    ) -> None:
        """Deliver an identical copy to every destination, in rank order."""
        for dst in dst_set:
            self.send(src, dst, tag, payload)

    def gather(self, dst: WorkerId, src_set: Sequence[WorkerId]) -> list[Envelope]:
        """One envelope per source, returned ordered by source rank."""
        ordered = sorted(src_set, key=lambda w: w.rank)
        return [self.recv(dst, src) for src in ordered]

    def scatter(
        self,
        src: WorkerId,
        payload_list: Sequence[bytes],
        dst_set: Sequence[WorkerId],
        tag: Tag = Tag.DATA,
    ) -> None:
        """payload_list[i] goes to dst_set[i]; a length mismatch is protocol corruption."""
        if len(payload_list) != len(dst_set):
            raise LengthMismatch(
                f"scatter: {len(payload_list)} payloads for {len(dst_set)} destinations"
            )
        for payload, dst in zip(payload_list, dst_set):
            self.send(src, dst, tag, payload)


class QueueTransport(Transport):
    """Default backing: direct delivery into in-process bounded queues."""

    def send(self, src: WorkerId, dst: WorkerId, tag: Tag, payload: bytes) -> None:
        if self.is_dead(dst):
            raise DeadWorker(dst)
        env = Envelope(src, dst, tag, payload)
        self._record(env)
        self._deliver(env)


_FRAME_HEADER = struct.Struct("<BI")  # tag byte, payload length
_HELLO = struct.Struct("<BBI")  # hello marker, kernel code, rank

_KERNEL_CODES = {k: i for i, k in enumerate(Kernel)}
_KERNEL_FROM_CODE = {i: k for i, k in enumerate(Kernel)}
_HELLO_MARKER = 0xFF


class SocketTransport(Transport):
    """Loopback TCP backing: one stream per (src, dst) channel.

    Frames are ``[tag: 1 byte][length: 4 bytes LE][payload]``. A stream
    opens with a hello frame identifying the sending worker. Received
    frames land in the same mailbox structures the queue backing uses, so
    recv/gather/probe semantics are identical.
    """

    def __init__(self, capacity: int = DEFAULT_CHANNEL_CAPACITY, trace: bool = False):
        super().__init__(capacity, trace)
        self._ports: dict[WorkerId, int] = {}
        self._listeners: dict[WorkerId, socket.socket] = {}
        self._conns: dict[tuple[WorkerId, WorkerId], socket.socket] = {}
        self._conn_locks: dict[tuple[WorkerId, WorkerId], threading.Lock] = {}
        self._threads: list[threading.Thread] = []
        self._net_lock = threading.Lock()

    def register(self, worker: WorkerId) -> None:
        super().register(worker)
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind(("127.0.0.1", 0))
        listener.listen(64)
        with self._net_lock:
            self._ports[worker] = listener.getsockname()[1]
            self._listeners[worker] = listener
        t = threading.Thread(target=self._accept_loop, args=(worker, listener), daemon=True)
        t.start()
        self._threads.append(t)

    def _accept_loop(self, worker: WorkerId, listener: socket.socket) -> None:
        while not self._stop:
            try:
                conn, _ = listener.accept()
            except OSError:
                return
            t = threading.Thread(target=self._reader_loop, args=(worker, conn), daemon=True)
            t.start()
            self._threads.append(t)

    @staticmethod
    def _read_exact(conn: socket.socket, n: int) -> bytes | None:
        buf = b""
        while len(buf) < n:
            chunk = conn.recv(n - len(buf))
            if not chunk:
                return None
            buf += chunk
        return buf

    def _reader_loop(self, dst: WorkerId, conn: socket.socket) -> None:
        hello = self._read_exact(conn, _HELLO.size)
        if hello is None:
            return
        marker, kernel_code, rank = _HELLO.unpack(hello)
        if marker != _HELLO_MARKER:
            conn.close()
            return
        src = WorkerId(_KERNEL_FROM_CODE[kernel_code], rank)
        while not self._stop:
            header = self._read_exact(conn, _FRAME_HEADER.size)
            if header is None:
                return
            tag_byte, length = _FRAME_HEADER.unpack(header)
            payload = self._read_exact(conn, length) if length else b""
            if payload is None and length:
                return
            env = Envelope(src, dst, Tag(tag_byte), payload or b"")
            try:
                self._deliver(env)
            except (TransportStopped, DeadWorker):
                return

    def _connection(self, src: WorkerId, dst: WorkerId) -> tuple[socket.socket, threading.Lock]:
        key = (src, dst)
        with self._net_lock:
            conn = self._conns.get(key)
            if conn is not None:
                return conn, self._conn_locks[key]
            port = self._ports.get(dst)
        if port is None:
            raise DeadWorker(dst)
        conn = socket.create_connection(("127.0.0.1", port))
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        conn.sendall(_HELLO.pack(_HELLO_MARKER, _KERNEL_CODES[src.kernel], src.rank))
        with self._net_lock:
            self._conns[key] = conn
            lock = self._conn_locks[key] = threading.Lock()
        return conn, lock

    def send(self, src: WorkerId, dst: WorkerId, tag: Tag, payload: bytes) -> None:
        if self._stop:
            raise TransportStopped("transport closed")
        if self.is_dead(dst):
            raise DeadWorker(dst)
        env = Envelope(src, dst, tag, payload)  # validates payload rules
        self._record(env)
        conn, lock = self._connection(src, dst)
        frame = _FRAME_HEADER.pack(int(tag), len(payload)) + payload
        try:
            with lock:
                conn.sendall(frame)
        except OSError as exc:
            raise DeadWorker(dst) from exc

    def close(self) -> None:
        super().close()
        with self._net_lock:
            sockets = list(self._listeners.values()) + list(self._conns.values())
            self._listeners.clear()
            self._conns.clear()
        for s in sockets:
            try:
                s.close()
            except OSError:
                pass
