"""Transport semantics, identical across both backings."""

import itertools
import random
import threading
import time

import pytest

from alflow.errors import DeadWorker, LengthMismatch, TransportStopped
from alflow.messages import recv_data, send_data
from alflow.transport import (
    Kernel,
    QueueTransport,
    SocketTransport,
    Tag,
    WorkerId,
)


def wid(rank, kernel=Kernel.GENERATOR):
    return WorkerId(kernel, rank)


A = WorkerId(Kernel.MANAGER, 0)
B = WorkerId(Kernel.EXCHANGE, 0)


@pytest.fixture(params=["queue", "socket"])
def transport(request):
    cls = QueueTransport if request.param == "queue" else SocketTransport
    t = cls(trace=True)
    yield t
    t.close()


def register(transport, *workers):
    for w in workers:
        transport.register(w)


def drain_one(transport, dst, src, timeout=5.0):
    env = transport.recv(dst, src, timeout=timeout)
    assert env is not None, f"no message from {src}"
    return env


class TestPointToPoint:
    def test_probe_empty_is_false(self, transport):
        register(transport, A, B)
        assert transport.probe(B, A) is False

    def test_send_probe_recv(self, transport):
        register(transport, A, B)
        transport.send(A, B, Tag.DATA, b"hello")
        deadline = time.monotonic() + 5
        while not transport.probe(B, A):
            assert time.monotonic() < deadline
            time.sleep(0.001)
        assert drain_one(transport, B, A).payload == b"hello"

    def test_thousand_sends_fifo(self, transport):
        register(transport, A, B)
        payloads = [f"m{i}".encode() for i in range(1000)]
        for p in payloads:
            transport.send(A, B, Tag.DATA, p)
        received = [drain_one(transport, B, A).payload for _ in range(1000)]
        assert received == payloads

    def test_recv_timeout_returns_none(self, transport):
        register(transport, A, B)
        assert transport.recv(B, A, timeout=0.05) is None

    def test_send_to_unregistered_raises(self, transport):
        register(transport, A)
        with pytest.raises(DeadWorker):
            transport.send(A, B, Tag.DATA, b"x")


class TestBroadcast:
    def test_fanout_to_three(self, transport):
        dsts = [wid(i) for i in range(3)]
        register(transport, A, *dsts)
        transport.broadcast(A, b"same", dsts)
        for d in dsts:
            assert drain_one(transport, d, A).payload == b"same"

    def test_empty_destination_set_is_noop(self, transport):
        register(transport, A)
        transport.broadcast(A, b"x", [])

    def test_interleaved_broadcast_pairs_keep_order(self, transport):
        dsts = [wid(i) for i in range(3)]
        register(transport, A, *dsts)
        for i in range(100):
            transport.broadcast(A, f"b1-{i}".encode(), dsts)
            transport.broadcast(A, f"b2-{i}".encode(), dsts)
        for d in dsts:
            for i in range(100):
                assert drain_one(transport, d, A).payload == f"b1-{i}".encode()
                assert drain_one(transport, d, A).payload == f"b2-{i}".encode()


class TestGather:
    @pytest.mark.parametrize("order", list(itertools.permutations(range(3))))
    def test_rank_order_independent_of_arrival(self, transport, order):
        srcs = [wid(i) for i in range(3)]
        register(transport, B, *srcs)
        for i in order:
            transport.send(srcs[i], B, Tag.DATA, f"from{i}".encode())
            # sends are sequential, so arrival order equals this loop's order
        got = transport.gather(B, srcs)
        assert [e.payload for e in got] == [b"from0", b"from1", b"from2"]

    def test_singleton(self, transport):
        src = wid(0)
        register(transport, B, src)
        transport.send(src, B, Tag.DATA, b"only")
        assert [e.payload for e in transport.gather(B, [src])] == [b"only"]

    def test_gather_from_retired_source_raises_dead_worker(self, transport):
        srcs = [wid(0), wid(1)]
        register(transport, B, *srcs)
        transport.send(srcs[0], B, Tag.DATA, b"ok")
        transport.retire(srcs[1])
        with pytest.raises(DeadWorker):
            transport.gather(B, srcs)


class TestScatter:
    def test_twenty_to_twenty(self, transport):
        dsts = [wid(i) for i in range(20)]
        register(transport, A, *dsts)
        transport.scatter(A, [f"p{i}".encode() for i in range(20)], dsts)
        for i, d in enumerate(dsts):
            assert drain_one(transport, d, A).payload == f"p{i}".encode()

    def test_one_to_one(self, transport):
        d = wid(0)
        register(transport, A, d)
        transport.scatter(A, [b"x"], [d])
        assert drain_one(transport, d, A).payload == b"x"

    def test_length_mismatch_is_hard_error(self, transport):
        dsts = [wid(0), wid(1)]
        register(transport, A, *dsts)
        with pytest.raises(LengthMismatch):
            transport.scatter(A, [b"a", b"b", b"c"], dsts)


class TestConcurrency:
    def test_multi_sender_per_channel_fifo(self, transport):
        srcs = [wid(i) for i in range(4)]
        register(transport, B, *srcs)
        rng = random.Random(7)
        counts = {s: 0 for s in srcs}

        def sender(src, n):
            for i in range(n):
                transport.send(src, B, Tag.DATA, f"{src.rank}:{i}".encode())
                if rng.random() < 0.2:
                    time.sleep(0.0005)

        threads = [threading.Thread(target=sender, args=(s, 50)) for s in srcs]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        seen = {s: -1 for s in srcs}
        for _ in range(200):
            env = transport.recv_any(B, timeout=5.0)
            assert env is not None
            rank, idx = env.payload.decode().split(":")
            src = wid(int(rank))
            assert int(idx) == seen[src] + 1, "per-channel FIFO violated"
            seen[src] = int(idx)
            counts[src] += 1
        assert all(c == 50 for c in counts.values()), "loss or duplication"

    def test_backpressure_blocks_until_recv(self):
        transport = QueueTransport(capacity=2)
        register(transport, A, B)
        transport.send(A, B, Tag.DATA, b"1")
        transport.send(A, B, Tag.DATA, b"2")
        unblocked = threading.Event()

        def blocked_sender():
            transport.send(A, B, Tag.DATA, b"3")
            unblocked.set()

        t = threading.Thread(target=blocked_sender, daemon=True)
        t.start()
        assert not unblocked.wait(0.15), "send should block on a full channel"
        assert drain_one(transport, B, A).payload == b"1"
        assert unblocked.wait(2.0), "send should resume after space frees"
        transport.close()

    def test_request_stop_wakes_blocked_recv(self, transport):
        register(transport, A, B)
        woke = []

        def blocked_recv():
            try:
                transport.recv(B, A)
            except TransportStopped:
                woke.append(True)

        t = threading.Thread(target=blocked_recv, daemon=True)
        t.start()
        time.sleep(0.05)
        transport.request_stop()
        t.join(2.0)
        assert woke == [True]


class TestSizeHandshake:
    def _exchange(self, transport, fixed):
        register(transport, A, B)
        send_data(transport, A, B, b"payload-one", fixed)
        send_data(transport, A, B, b"payload-two-longer", fixed)
        first = recv_data(transport, B, A, fixed, timeout=5.0)
        second = recv_data(transport, B, A, fixed, timeout=5.0)
        assert first.payload == b"payload-one"
        assert second.payload == b"payload-two-longer"

    def test_variable_size_every_data_preceded_by_handshake(self, transport):
        self._exchange(transport, fixed=False)
        tags = [t for (_, _, t) in transport.trace]
        assert tags == [Tag.SIZE_HANDSHAKE, Tag.DATA, Tag.SIZE_HANDSHAKE, Tag.DATA]

    def test_fixed_size_never_emits_handshake(self, transport):
        self._exchange(transport, fixed=True)
        tags = [t for (_, _, t) in transport.trace]
        assert tags == [Tag.DATA, Tag.DATA]
        assert Tag.SIZE_HANDSHAKE not in tags
