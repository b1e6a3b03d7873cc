"""Per-layer gradient importance and the Gradient Importance Bitmap (GIB).

A layer's importance is the first-order estimate of how much the loss would
move if the layer's parameters were zeroed: ``sum_j |g_j * p_j|`` over the
layer's elements.  The PS ranks layers by it and defers the least important
ones (up to a byte budget) to the in-computation stage.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import GibFormatError, ShapeError
from .params import LayeredVector, LayerPartition, check_layer_set

_HEADER = struct.Struct("<II")


@dataclass(frozen=True)
class LayerImportance:
    scores: tuple  # (layer_id, score) pairs in layer order

    def as_array(self) -> np.ndarray:
        return np.array([s for _, s in self.scores], dtype=np.float64)


@dataclass(frozen=True)
class Gib:
    """Layers in ``ics_set`` go to ICS; the complement goes to RS.

    ``order`` lists the ICS layers from least to most important so workers
    can sequence their ICS chunks; it is not part of the bitmap encoding.
    """

    ics_set: frozenset = frozenset()
    iteration_tag: int = 0
    order: tuple = field(default=(), compare=False)

    def rs_set(self, partition: LayerPartition) -> frozenset:
        return partition.complement(self.ics_set)

    def ordered_ics(self) -> list:
        if set(self.order) == set(self.ics_set):
            return list(self.order)
        return sorted(self.ics_set)


def pgp_layer_importance(params: LayeredVector, grads, partition: LayerPartition = None) -> LayerImportance:
    partition = partition or params.partition
    g = grads.values if isinstance(grads, LayeredVector) else np.asarray(grads, dtype=np.float64)
    if params.values.shape != g.shape or params.values.shape[0] != partition.total_count:
        raise ShapeError("params and gradients must share the partition shape")
    prod = np.abs(g * params.values)
    scores = tuple((layer.layer_id, float(prod[layer.offset:layer.stop].sum())) for layer in partition.layers)
    return LayerImportance(scores)


def rank_layers(imp: LayerImportance) -> list:
    """Layer ids ascending by score; ties go to the lower layer id."""
    return [lid for lid, _ in sorted(imp.scores, key=lambda t: (t[1], t[0]))]


def build_gib(imp: LayerImportance, partition: LayerPartition, budget_bytes: int, iteration_tag: int = 0) -> Gib:
    if budget_bytes < 0:
        raise ValueError("budget must be non-negative")
    chosen = []
    used = 0
    for lid in rank_layers(imp):
        size = partition.layer_nbytes(lid)
        if used + size > budget_bytes:
            break
        chosen.append(lid)
        used += size
    return Gib(frozenset(chosen), iteration_tag, tuple(chosen))


def gib_encode(g: Gib, layer_count: int) -> bytes:
    if any(l < 0 or l >= layer_count for l in g.ics_set):
        raise GibFormatError(f"ICS layer outside [0, {layer_count})")
    bitmap = bytearray((layer_count + 7) // 8)
    for l in g.ics_set:
        bitmap[l >> 3] |= 1 << (l & 7)
    return _HEADER.pack(g.iteration_tag & 0xFFFFFFFF, layer_count) + bytes(bitmap)


def gib_decode(buf: bytes) -> tuple:
    """Inverse of :func:`gib_encode`; returns ``(gib, layer_count)``."""
    if len(buf) < _HEADER.size:
        raise GibFormatError(f"GIB buffer of {len(buf)} bytes is shorter than its header")
    tag, layer_count = _HEADER.unpack_from(buf)
    nbytes = (layer_count + 7) // 8
    if len(buf) < _HEADER.size + nbytes:
        raise GibFormatError(f"GIB bitmap truncated: need {nbytes} bytes, have {len(buf) - _HEADER.size}")
    bitmap = buf[_HEADER.size:_HEADER.size + nbytes]
    ics = frozenset(l for l in range(layer_count) if bitmap[l >> 3] >> (l & 7) & 1)
    return Gib(ics, tag), layer_count


def gib_wire_size(layer_count: int) -> int:
    return _HEADER.size + (layer_count + 7) // 8


def empty_gib(iteration_tag: int = 0) -> Gib:
    return Gib(frozenset(), iteration_tag, ())


def gib_from_layers(layers: Iterable[int], partition: LayerPartition, iteration_tag: int = 0, order: Sequence[int] = ()) -> Gib:
    s = check_layer_set(layers, partition)
    return Gib(s, iteration_tag, tuple(order) if order else tuple(sorted(s)))
