"""Protocol messages and their byte encoding.

Gradient payload layout (little-endian)::

    kind:u8  iteration:u32  entries:u16
    entries x (layer_id:u32  count:u32  values:f32[count])

GibUpdate carries ``kind:u8`` then the GIB bytes, then ``n:u16`` and ``n``
u16 layer ids giving the ICS order.  LossReport is ``kind:u8 iteration:u32
loss:f64 compute_seconds:f64``.  Simulated flow sizes are the encoded sizes,
computed arithmetically so no encoding happens on the hot path.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from ..errors import ProtocolError
from ..importance import Gib, gib_decode, gib_encode, gib_wire_size
from ..params import LayerPartition

PS = -1

_HDR = struct.Struct("<BIH")
_ENTRY = struct.Struct("<II")
_LOSS = struct.Struct("<BIdd")
_U16 = struct.Struct("<H")


class MessageKind(Enum):
    PUSH_IMPORTANT = "PushImportant"
    PUSH_ICS_CHUNK = "PushIcsChunk"
    PULL_IMPORTANT = "PullImportant"
    ICS_GLOBAL_CHUNK = "IcsGlobalChunk"
    GIB_UPDATE = "GibUpdate"
    LOSS_REPORT = "LossReport"
    PUSH_FULL = "PushFull"
    PULL_FULL = "PullFull"


_KIND_CODE = {k: i + 1 for i, k in enumerate(MessageKind)}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}

GRADIENT_KINDS = frozenset({
    MessageKind.PUSH_IMPORTANT, MessageKind.PUSH_ICS_CHUNK, MessageKind.PULL_IMPORTANT,
    MessageKind.ICS_GLOBAL_CHUNK, MessageKind.PUSH_FULL, MessageKind.PULL_FULL,
})
PUSH_KINDS = frozenset({MessageKind.PUSH_IMPORTANT, MessageKind.PUSH_ICS_CHUNK, MessageKind.PUSH_FULL})


@dataclass
class Message:
    kind: MessageKind
    iteration: int
    payload: object
    size_bytes: int
    sender: int = PS
    dest: int = PS
    chunk: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def payload_elements(self) -> int:
        if self.kind in GRADIENT_KINDS:
            return sum(len(v) for v in self.payload.values())
        return 0


def payload_wire_size(payload, bytes_per_element: int = 4) -> int:
    return _HDR.size + sum(_ENTRY.size + bytes_per_element * len(v) for v in payload.values())


def gib_message_size(gib: Gib, layer_count: int) -> int:
    return 1 + gib_wire_size(layer_count) + _U16.size * (1 + len(gib.order))


LOSS_REPORT_SIZE = _LOSS.size


def gradient_message(kind: MessageKind, iteration: int, payload, partition: LayerPartition,
                     sender: int = PS, dest: int = PS, chunk: int = 0) -> Message:
    size = payload_wire_size(payload, partition.bytes_per_element)
    return Message(kind, iteration, payload, size, sender, dest, chunk)


def gib_message(gib: Gib, layer_count: int, dest: int) -> Message:
    return Message(MessageKind.GIB_UPDATE, gib.iteration_tag, gib, gib_message_size(gib, layer_count), PS, dest)


def loss_message(iteration: int, epoch: int, loss: float, compute_seconds: float, sender: int) -> Message:
    return Message(MessageKind.LOSS_REPORT, iteration, (float(loss), float(compute_seconds)), LOSS_REPORT_SIZE,
                   sender, PS, meta={"epoch": epoch})


def encode_message(msg: Message, layer_count: Optional[int] = None) -> bytes:
    code = _KIND_CODE[msg.kind]
    if msg.kind in GRADIENT_KINDS:
        items = sorted(msg.payload.items())
        if len(items) > 0xFFFF:
            raise ProtocolError("too many layer entries for a u16 count")
        parts = [_HDR.pack(code, msg.iteration & 0xFFFFFFFF, len(items))]
        for lid, vals in items:
            vals = np.asarray(vals, dtype="<f4")
            parts.append(_ENTRY.pack(lid, vals.shape[0]))
            parts.append(vals.tobytes())
        return b"".join(parts)
    if msg.kind is MessageKind.GIB_UPDATE:
        if layer_count is None:
            raise ProtocolError("GIB encoding needs the layer count")
        gib = msg.payload
        order = list(gib.order)
        return (bytes([code]) + gib_encode(gib, layer_count) + _U16.pack(len(order))
                + b"".join(_U16.pack(l) for l in order))
    if msg.kind is MessageKind.LOSS_REPORT:
        loss, tc = msg.payload
        return _LOSS.pack(code, msg.iteration & 0xFFFFFFFF, loss, tc)
    raise ProtocolError(f"cannot encode {msg.kind}")


def decode_message(buf: bytes) -> Message:
    if not buf:
        raise ProtocolError("empty buffer")
    kind = _CODE_KIND.get(buf[0])
    if kind is None:
        raise ProtocolError(f"unknown message kind byte {buf[0]}")
    if kind in GRADIENT_KINDS:
        if len(buf) < _HDR.size:
            raise ProtocolError("truncated header")
        _, iteration, entries = _HDR.unpack_from(buf)
        off = _HDR.size
        payload = {}
        for _ in range(entries):
            if len(buf) < off + _ENTRY.size:
                raise ProtocolError("truncated layer entry")
            lid, count = _ENTRY.unpack_from(buf, off)
            off += _ENTRY.size
            end = off + 4 * count
            if len(buf) < end:
                raise ProtocolError("truncated layer values")
            payload[lid] = np.frombuffer(buf[off:end], dtype="<f4").astype(np.float64)
            off = end
        return Message(kind, iteration, payload, len(buf))
    if kind is MessageKind.GIB_UPDATE:
        gib, layer_count = gib_decode(buf[1:])
        off = 1 + gib_wire_size(layer_count)
        if len(buf) < off + _U16.size:
            raise ProtocolError("truncated GIB order")
        (n,) = _U16.unpack_from(buf, off)
        off += _U16.size
        if len(buf) < off + _U16.size * n:
            raise ProtocolError("truncated GIB order")
        order = tuple(_U16.unpack_from(buf, off + 2 * i)[0] for i in range(n))
        return Message(kind, gib.iteration_tag, Gib(gib.ics_set, gib.iteration_tag, order), len(buf))
    if kind is MessageKind.LOSS_REPORT:
        if len(buf) < _LOSS.size:
            raise ProtocolError("truncated loss report")
        _, iteration, loss, tc = _LOSS.unpack_from(buf)
        return Message(kind, iteration, (loss, tc), len(buf))
    raise ProtocolError(f"cannot decode {kind}")
