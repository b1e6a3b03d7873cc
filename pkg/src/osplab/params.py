"""Flat parameter / gradient storage split into named layers.

Every protocol moves whole layers around, so the unit of selection here is a
layer id.  A ``LayerPayload`` is the sparse-by-layer form used on the wire: a
plain ``dict`` mapping layer id to that layer's values.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Dict, Iterable, Sequence, Union

import numpy as np

from .errors import InvalidLayerError, PartitionError, ShapeError

LayerPayload = Dict[int, np.ndarray]
LayerSet = frozenset

DEFAULT_BYTES_PER_ELEMENT = 4


@dataclass(frozen=True)
class Layer:
    layer_id: int
    offset: int
    count: int

    @property
    def stop(self) -> int:
        return self.offset + self.count


@dataclass(frozen=True)
class LayerPartition:
    layers: tuple
    bytes_per_element: int = DEFAULT_BYTES_PER_ELEMENT

    def __post_init__(self):
        if not self.layers:
            raise PartitionError("partition needs at least one layer")
        expect = 0
        for i, layer in enumerate(self.layers):
            if layer.layer_id != i:
                raise PartitionError(f"layer ids must be dense from 0, got {layer.layer_id} at {i}")
            if layer.count <= 0:
                raise PartitionError(f"layer {i} has non-positive count {layer.count}")
            if layer.offset != expect:
                raise PartitionError(f"layer {i} offset {layer.offset} != {expect}")
            expect = layer.stop
        if self.bytes_per_element <= 0:
            raise PartitionError("bytes_per_element must be positive")

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def total_count(self) -> int:
        return self.layers[-1].stop

    @property
    def model_bytes(self) -> int:
        return self.total_count * self.bytes_per_element

    @property
    def counts(self) -> list:
        return [layer.count for layer in self.layers]

    def layer_slice(self, layer_id: int) -> slice:
        layer = self.layers[layer_id]
        return slice(layer.offset, layer.stop)

    def layer_nbytes(self, layer_id: int) -> int:
        return self.layers[layer_id].count * self.bytes_per_element

    def all_layers(self) -> frozenset:
        return frozenset(range(self.num_layers))

    def complement(self, s: Iterable[int]) -> frozenset:
        return self.all_layers() - frozenset(s)


def make_partition(layer_counts: Sequence[int], bytes_per_element: int = DEFAULT_BYTES_PER_ELEMENT) -> LayerPartition:
    counts = [int(c) for c in layer_counts]
    if not counts:
        raise PartitionError("empty layer_counts")
    if any(c <= 0 for c in counts):
        raise PartitionError(f"layer counts must be positive: {counts}")
    layers = []
    offset = 0
    for i, c in enumerate(counts):
        layers.append(Layer(i, offset, c))
        offset += c
    return LayerPartition(tuple(layers), int(bytes_per_element))


class LayeredVector:
    """A float64 vector tied to a partition.  Used for parameters and gradients alike."""

    __slots__ = ("values", "partition")

    def __init__(self, values, partition: LayerPartition, check_finite: bool = True):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 1 or values.shape[0] != partition.total_count:
            raise ShapeError(f"vector of shape {values.shape} does not match partition of {partition.total_count}")
        if check_finite and not np.all(np.isfinite(values)):
            raise ShapeError("vector contains non-finite values")
        self.values = values
        self.partition = partition

    def layer(self, layer_id: int) -> np.ndarray:
        return self.values[self.partition.layer_slice(layer_id)]

    def copy(self) -> "LayeredVector":
        return LayeredVector(self.values.copy(), self.partition, check_finite=False)

    def __len__(self):
        return self.values.shape[0]

    def __repr__(self):
        return f"LayeredVector(n={len(self)}, layers={self.partition.num_layers})"


ParamVector = LayeredVector
GradVector = LayeredVector


def zeros_like(partition: LayerPartition) -> LayeredVector:
    return LayeredVector(np.zeros(partition.total_count), partition, check_finite=False)


def check_layer_set(s: Iterable[int], partition: LayerPartition) -> frozenset:
    s = frozenset(int(x) for x in s)
    bad = [x for x in s if x < 0 or x >= partition.num_layers]
    if bad:
        raise InvalidLayerError(f"layers {sorted(bad)} outside partition of {partition.num_layers} layers")
    return s


def check_payload(p: LayerPayload, partition: LayerPartition) -> None:
    for layer_id, vals in p.items():
        if layer_id < 0 or layer_id >= partition.num_layers:
            raise InvalidLayerError(f"payload layer {layer_id} outside partition")
        if np.shape(vals) != (partition.layers[layer_id].count,):
            raise ShapeError(
                f"payload layer {layer_id} has shape {np.shape(vals)}, expected ({partition.layers[layer_id].count},)"
            )


def slice_layers(v: LayeredVector, s: Iterable[int]) -> LayerPayload:
    s = check_layer_set(s, v.partition)
    return {l: v.layer(l).copy() for l in sorted(s)}


def merge_payload(v: LayeredVector, p: LayerPayload) -> LayeredVector:
    check_payload(p, v.partition)
    out = v.copy()
    for layer_id in sorted(p):
        out.values[v.partition.layer_slice(layer_id)] = p[layer_id]
    return out


def apply_delta(
    p: LayeredVector,
    d: Union[LayeredVector, LayerPayload],
    scale: float = 1.0,
    inplace: bool = False,
) -> LayeredVector:
    """``p + scale * d``; a payload delta touches only its listed layers."""
    out = p if inplace else p.copy()
    if isinstance(d, LayeredVector):
        if d.partition.total_count != p.partition.total_count:
            raise ShapeError("delta length does not match parameters")
        if scale == 1.0:
            out.values += d.values
        elif scale != 0.0:
            out.values += scale * d.values
        return out
    check_payload(d, p.partition)
    for layer_id in sorted(d):
        sl = p.partition.layer_slice(layer_id)
        if scale == 1.0:
            out.values[sl] += d[layer_id]
        elif scale != 0.0:
            out.values[sl] += scale * np.asarray(d[layer_id])
    return out


def layer_bytes(s: Iterable[int], partition: LayerPartition) -> int:
    s = check_layer_set(s, partition)
    return sum(partition.layer_nbytes(l) for l in s)


def payload_bytes(p: LayerPayload, partition: LayerPartition) -> int:
    return layer_bytes(p.keys(), partition)


def checksum(v: Union[LayeredVector, np.ndarray]) -> str:
    """Hex digest of the raw float64 bytes; equal digests mean bitwise-equal vectors."""
    arr = v.values if isinstance(v, LayeredVector) else np.asarray(v, dtype=np.float64)
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()
