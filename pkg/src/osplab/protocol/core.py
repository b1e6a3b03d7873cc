"""Protocol building blocks shared by the OSP and baseline engines."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from ..errors import ProtocolError
from ..importance import Gib, empty_gib
from ..params import LayeredVector, LayerPartition, slice_layers
from .messages import Message, MessageKind, gradient_message


@dataclass
class WorkerState:
    worker_id: int
    params: LayeredVector
    subset_weight: float = 1.0
    iteration: int = 0
    current_gib: Gib = field(default_factory=empty_gib)
    # local deltas applied to not-yet-corrected layers, and the values they were added to
    pending_local_ics: Dict[int, np.ndarray] = field(default_factory=dict)
    pending_base: Dict[int, np.ndarray] = field(default_factory=dict)
    pending_iteration: Optional[int] = None
    rng_seed: int = 0

    def __post_init__(self):
        if not self.subset_weight > 0:
            raise ValueError("subset_weight must be positive")


@dataclass
class ServerState:
    global_params: LayeredVector
    weights: Sequence[float]
    next_gib: Gib = field(default_factory=empty_gib)
    agg_buffers: Dict[int, dict] = field(default_factory=dict)
    importance_accum: Dict[int, float] = field(default_factory=dict)
    dropped_stale: int = 0


def aggregate(payloads: Mapping[int, Mapping[int, np.ndarray]], weights: Mapping[int, float]) -> Dict[int, np.ndarray]:
    """Weighted mean of per-worker payloads, summed in ascending worker id."""
    workers = sorted(payloads)
    if not workers:
        raise ProtocolError("nothing to aggregate")
    layers = set(payloads[workers[0]])
    for w in workers[1:]:
        if set(payloads[w]) != layers:
            raise ProtocolError(f"worker {w} payload covers layers {sorted(payloads[w])}, expected {sorted(layers)}")
    total = 0.0
    for w in workers:
        total += weights[w]
    if not total > 0:
        raise ProtocolError("weights must sum to a positive value")
    out = {}
    for l in sorted(layers):
        acc = weights[workers[0]] * np.asarray(payloads[workers[0]][l], dtype=np.float64)
        for w in workers[1:]:
            acc += weights[w] * np.asarray(payloads[w][l], dtype=np.float64)
        out[l] = acc / total
    return out


def plan_ics_chunks(order: Sequence[int], partition: LayerPartition, n_chunks: int) -> List[List[int]]:
    """Split ICS layers (least important first) into at most ``n_chunks`` byte-balanced runs.

    A layer goes to the chunk containing the midpoint of its byte span, so
    every chunk that exists is non-empty and the order is preserved.
    """
    if not order:
        return []
    n_chunks = max(1, int(n_chunks))
    sizes = [partition.layer_nbytes(l) for l in order]
    total = float(sum(sizes))
    chunks: List[List[int]] = [[] for _ in range(n_chunks)]
    start = 0.0
    for l, s in zip(order, sizes):
        c = min(n_chunks - 1, int(math.floor((start + s / 2.0) * n_chunks / total)))
        chunks[c].append(l)
        start += s
    return chunks


def chunk_count(t_c: float, period: float) -> int:
    if not period > 0:
        raise ValueError("chunk period must be positive")
    return max(1, int(math.floor(t_c / period + 1e-9)))


def osp_worker_iteration(ws: WorkerState, grad_delta: LayeredVector, n_chunks: int = 1):
    """Split one iteration's delta by the worker's current GIB.

    Returns the RS push and the ICS chunk pushes; chunk ``c`` is meant to be
    sent ``c`` periods into the next compute phase.
    """
    part = grad_delta.partition
    gib = ws.current_gib
    rs_layers = gib.rs_set(part)
    rs_msg = gradient_message(MessageKind.PUSH_IMPORTANT, ws.iteration, slice_layers(grad_delta, rs_layers),
                              part, sender=ws.worker_id)
    ics_msgs = []
    for c, layers in enumerate(plan_ics_chunks(gib.ordered_ics(), part, n_chunks)):
        if not layers:
            continue
        payload = {l: grad_delta.layer(l).copy() for l in layers}
        ics_msgs.append(gradient_message(MessageKind.PUSH_ICS_CHUNK, ws.iteration, payload, part,
                                         sender=ws.worker_id, chunk=c))
    return rs_msg, ics_msgs


def lgp_partial(ws: WorkerState, global_rs_delta: Mapping[int, np.ndarray],
                local_ics_delta: Mapping[int, np.ndarray], iteration: Optional[int] = None) -> LayeredVector:
    """Apply global deltas to RS layers and the worker's own deltas to deferred layers."""
    overlap = set(global_rs_delta) & set(local_ics_delta)
    if overlap:
        raise ProtocolError(f"layers {sorted(overlap)} appear in both the global RS and local ICS deltas")
    if ws.pending_local_ics:
        raise ProtocolError("previous ICS corrections are still outstanding")
    part = ws.params.partition
    vals = ws.params.values
    for l in sorted(global_rs_delta):
        vals[part.layer_slice(l)] += global_rs_delta[l]
    for l in sorted(local_ics_delta):
        sl = part.layer_slice(l)
        ws.pending_base[l] = vals[sl].copy()
        ws.pending_local_ics[l] = np.asarray(local_ics_delta[l], dtype=np.float64).copy()
        vals[sl] += local_ics_delta[l]
    ws.pending_iteration = iteration if local_ics_delta else None
    return ws.params


def lgp_correct(ws: WorkerState, global_chunk: Mapping[int, np.ndarray]) -> LayeredVector:
    """Replace the local estimate of each arrived layer with its global delta.

    Rebuilding from the stored pre-estimate values gives exactly
    ``base + global``, which is what the PS computes, rather than
    ``(base + local) - local + global`` with its rounding residue.
    """
    part = ws.params.partition
    vals = ws.params.values
    for l in sorted(global_chunk):
        if l not in ws.pending_local_ics:
            raise ProtocolError(f"correction for layer {l} with no pending local delta")
        sl = part.layer_slice(l)
        base = ws.pending_base.pop(l, None)
        if base is None:
            vals[sl] += np.asarray(global_chunk[l]) - ws.pending_local_ics[l]
        else:
            vals[sl] = base + global_chunk[l]
        del ws.pending_local_ics[l]
    if not ws.pending_local_ics:
        ws.pending_iteration = None
    return ws.params


def first_iteration_bootstrap(ws: WorkerState) -> Gib:
    if ws.iteration != 0:
        raise ProtocolError("bootstrap GIB only applies before the first iteration")
    ws.current_gib = empty_gib(0)
    return ws.current_gib
