"""Message kinds and payload codecs layered on the raw transport.

Data and signal payloads start with a one-byte kind so multiplexed
receivers (the manager in particular) can dispatch without relying on
loop position. Weight messages use the WEIGHTS tag and carry the raw
float64 vector.

When ``fixed_size_data`` is false, every DATA message is preceded by a
SIZE_HANDSHAKE message on the same channel carrying the upcoming payload
length as an unsigned 32-bit integer; when true, no handshake messages
appear at all.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from enum import IntEnum

from .errors import ProtocolError
from .transport import Envelope, Kernel, Tag, Transport, WorkerId
from .types import (
    LabeledSample,
    Sample,
    deserialize_labeled_list,
    deserialize_sample,
    deserialize_sample_list,
    serialize_labeled_list,
    serialize_sample,
    serialize_sample_list,
)

_U32 = struct.Struct("<I")


class MsgKind(IntEnum):
    STOP_RUN = 1
    NEW_DATA_ARRIVED = 2
    WEIGHT_SYNC = 3
    ORACLE_REQUEST = 4
    ORACLE_RESULT = 5
    TRAIN_BROADCAST = 6
    ORACLE_JOB = 7
    GEN_INPUT = 8
    GEN_FEEDBACK = 9
    PRED_BATCH = 10
    PRED_RESULT = 11
    BUFFER_PREDICT_REQ = 12
    BUFFER_PREDICT_RES = 13
    EXCHANGE_DONE = 14


#: among kernel workers, only generators and trainers may request shutdown;
#: the controller roles own shutdown themselves. Any other origin on a
#: STOP_RUN signal means a kernel failure was converted into a stop.
STOP_ORIGIN_KERNELS = (Kernel.GENERATOR, Kernel.TRAINING, Kernel.MANAGER, Kernel.EXCHANGE)

_KERNEL_CODES = {k: i for i, k in enumerate(Kernel)}
_KERNEL_FROM_CODE = {i: k for i, k in enumerate(Kernel)}
_SIGNAL = struct.Struct("<BBIB")  # kind, origin kernel, origin rank, failure flag


@dataclass(frozen=True)
class ControlSignal:
    """A control-plane event: what happened and which worker it came from."""

    kind: MsgKind
    origin: WorkerId
    failure: bool = False

    def __post_init__(self):
        if self.kind == MsgKind.STOP_RUN and not self.failure:
            if self.origin.kernel not in STOP_ORIGIN_KERNELS:
                raise ProtocolError(
                    f"only generators and trainers may request shutdown, got {self.origin}"
                )

    def encode(self) -> bytes:
        return _SIGNAL.pack(
            int(self.kind), _KERNEL_CODES[self.origin.kernel], self.origin.rank, int(self.failure)
        )

    @classmethod
    def decode(cls, payload: bytes) -> "ControlSignal":
        kind, kernel_code, rank, failure = _SIGNAL.unpack(payload)
        return cls(MsgKind(kind), WorkerId(_KERNEL_FROM_CODE[kernel_code], rank), bool(failure))


def send_signal(transport: Transport, src: WorkerId, dst: WorkerId, signal: ControlSignal) -> None:
    transport.send(src, dst, Tag.SIGNAL, signal.encode())


# --- data-plane payloads -----------------------------------------------------


def encode_sample_msg(kind: MsgKind, sample: Sample, fixed_size: bool) -> bytes:
    return bytes([kind]) + serialize_sample(sample, with_count=not fixed_size)


def decode_sample_msg(payload: bytes, fixed_size: bool) -> Sample:
    return deserialize_sample(payload[1:], with_count=not fixed_size)


def encode_sample_list_msg(kind: MsgKind, samples) -> bytes:
    return bytes([kind]) + serialize_sample_list(samples)


def decode_sample_list_msg(payload: bytes) -> list[Sample]:
    return deserialize_sample_list(payload[1:])


def encode_labeled_list_msg(kind: MsgKind, items) -> bytes:
    return bytes([kind]) + serialize_labeled_list(items)


def decode_labeled_list_msg(payload: bytes) -> list[LabeledSample]:
    return deserialize_labeled_list(payload[1:])


def encode_stats_msg(kind: MsgKind, stats: dict) -> bytes:
    return bytes([kind]) + json.dumps(stats).encode()


def decode_stats_msg(payload: bytes) -> dict:
    return json.loads(payload[1:].decode())


def kind_of(env: Envelope) -> MsgKind:
    if not env.payload:
        raise ProtocolError(f"empty payload on {env.tag.name} {env.src}->{env.dst}")
    return MsgKind(env.payload[0])


# --- handshake-aware data send/recv ------------------------------------------


def send_data(
    transport: Transport,
    src: WorkerId,
    dst: WorkerId,
    payload: bytes,
    fixed_size: bool,
) -> None:
    """Send a DATA message, announcing its size first when sizes are dynamic."""
    if not fixed_size:
        transport.send(src, dst, Tag.SIZE_HANDSHAKE, _U32.pack(len(payload)))
    transport.send(src, dst, Tag.DATA, payload)


def recv_data(
    transport: Transport,
    dst: WorkerId,
    src: WorkerId,
    fixed_size: bool,
    timeout: float | None = None,
) -> Envelope | None:
    """Receive one DATA message, consuming and checking its handshake first."""
    env = transport.recv(dst, src, timeout=timeout)
    if env is None:
        return None
    return resolve_data(transport, dst, env, fixed_size)


def resolve_data(
    transport: Transport, dst: WorkerId, env: Envelope, fixed_size: bool
) -> Envelope:
    """Turn a just-received envelope into its DATA envelope.

    With dynamic sizes the first envelope on a channel is the handshake;
    the matching DATA message immediately follows on the same FIFO channel.
    Signal and weight envelopes pass through untouched.
    """
    if env.tag in (Tag.SIGNAL, Tag.WEIGHTS):
        return env
    if not fixed_size:
        if env.tag != Tag.SIZE_HANDSHAKE:
            raise ProtocolError(f"expected size handshake from {env.src}, got {env.tag.name}")
        (announced,) = _U32.unpack(env.payload)
        data = transport.recv(dst, env.src)
        if data.tag != Tag.DATA or len(data.payload) != announced:
            raise ProtocolError(
                f"announced {announced} bytes from {env.src}, got "
                f"{data.tag.name} with {len(data.payload)}"
            )
        return data
    if env.tag == Tag.SIZE_HANDSHAKE:
        raise ProtocolError(f"size handshake from {env.src} in fixed-size mode")
    return env


def broadcast_data(
    transport: Transport, src: WorkerId, payload: bytes, dsts, fixed_size: bool
) -> None:
    for dst in dsts:
        send_data(transport, src, dst, payload, fixed_size)


def scatter_data(
    transport: Transport, src: WorkerId, payloads, dsts, fixed_size: bool
) -> None:
    if len(payloads) != len(dsts):
        # route through the transport so the error type matches plain scatter
        transport.scatter(src, payloads, dsts)
    for payload, dst in zip(payloads, dsts):
        send_data(transport, src, dst, payload, fixed_size)


def gather_data(transport: Transport, dst: WorkerId, srcs, fixed_size: bool) -> list[Envelope]:
    """Gather one DATA envelope per source, ordered by source rank."""
    ordered = sorted(srcs, key=lambda w: w.rank)
    return [recv_data(transport, dst, src, fixed_size) for src in ordered]
