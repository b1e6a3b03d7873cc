"""OSP worker and server state machines.

Each iteration a worker pushes the important layers (RS) and waits at the
barrier; the remaining layers are applied locally straight away (LGP) and
pushed in chunks while the next iteration computes (ICS).  The PS returns the
global value of each deferred layer as soon as every worker's copy has
arrived, and the worker swaps its local estimate for it.

The PS aggregates per layer rather than per message.  If workers ever split
an iteration with different GIBs (a GIB update landing between two workers'
compute-done instants), a layer some worker pushed in RS is simply completed
later by the others' ICS pushes, and the early pushers treat it as deferred.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from ..errors import ProtocolError
from ..importance import build_gib, pgp_layer_importance
from ..netsim import ServerDelayProfile
from ..params import LayeredVector, LayerPartition, apply_delta
from ..tuning import NetworkParams, SguSchedule, compute_umax, tune_sgu
from .actions import Ready, Send, Settled, Timer
from .core import (ServerState, WorkerState, aggregate, first_iteration_bootstrap, lgp_correct, lgp_partial,
                   osp_worker_iteration)
from .messages import PS, Message, MessageKind, gib_message, gradient_message


class OspWorker:
    def __init__(self, state: WorkerState, n_chunks: int = 4, chunk_period: float = 0.0):
        self.state = state
        self.n_chunks = n_chunks
        self.chunk_period = chunk_period
        self._rs_sent: Dict[int, dict] = {}
        self._ics_local: Dict[int, dict] = {}
        self._staged: Dict[int, List[Message]] = {}
        self._unsent: Dict[tuple, Message] = {}
        self._inbox: List[Message] = []
        # called as hook(iteration, params) the moment an iteration settles
        self.settle_hook: Optional[Callable] = None
        first_iteration_bootstrap(state)

    @property
    def worker_id(self) -> int:
        return self.state.worker_id

    def on_compute_done(self, iteration: int, delta: LayeredVector) -> list:
        # ICS chunks still queued from the previous phase go out before the new RS push
        acts = self.flush()
        self.state.iteration = iteration
        rs_msg, ics_msgs = osp_worker_iteration(self.state, delta, self.n_chunks)
        self._rs_sent[iteration] = rs_msg.payload
        local = {}
        for m in ics_msgs:
            local.update(m.payload)
        self._ics_local[iteration] = local
        self._staged[iteration] = ics_msgs
        acts.append(Send(rs_msg))
        return acts

    def on_message(self, msg: Message) -> list:
        if msg.kind is MessageKind.GIB_UPDATE:
            if msg.payload.iteration_tag >= self.state.current_gib.iteration_tag:
                self.state.current_gib = msg.payload
            return []
        if msg.kind not in (MessageKind.PULL_IMPORTANT, MessageKind.ICS_GLOBAL_CHUNK):
            raise ProtocolError(f"OSP worker cannot handle {msg.kind}")
        self._inbox.append(msg)
        return self._drain_inbox()

    def on_timer(self, tag: tuple) -> list:
        _, iteration, chunk = tag
        msg = self._unsent.pop((iteration, chunk), None)
        return [Send(msg)] if msg is not None else []

    def flush(self) -> list:
        acts = [Send(self._unsent[k]) for k in sorted(self._unsent)]
        self._unsent.clear()
        return acts

    def _ready_for(self, msg: Message) -> bool:
        if msg.kind is MessageKind.PULL_IMPORTANT:
            return not self.state.pending_local_ics
        return (self.state.pending_iteration == msg.iteration
                and all(l in self.state.pending_local_ics for l in msg.payload))

    def _drain_inbox(self) -> list:
        acts = []
        progressed = True
        while progressed:
            progressed = False
            for i, m in enumerate(self._inbox):
                if self._ready_for(m):
                    del self._inbox[i]
                    acts += self._handle(m)
                    progressed = True
                    break
        return acts

    def _settled(self, i: int) -> list:
        if self.settle_hook is not None:
            self.settle_hook(i, self.state.params)
        return [Settled(i)]

    def _handle(self, msg: Message) -> list:
        st = self.state
        i = msg.iteration
        if msg.kind is MessageKind.ICS_GLOBAL_CHUNK:
            lgp_correct(st, msg.payload)
            return self._settled(i) if not st.pending_local_ics else []
        rs_sent = self._rs_sent.pop(i)
        local = dict(self._ics_local.pop(i))
        for l in rs_sent:
            if l not in msg.payload:
                local[l] = rs_sent[l]
        lgp_partial(st, msg.payload, local, iteration=i)
        acts = [Ready(i)]
        if not st.pending_local_ics:
            acts += self._settled(i)
        for m in self._staged.pop(i):
            self._unsent[(i, m.chunk)] = m
            acts.append(Timer(m.chunk * self.chunk_period, ("chunk", i, m.chunk)))
        return acts


class IcsBudget:
    """Source of the ICS byte budget: a fixed value, or the per-epoch loss schedule."""

    def __init__(self, model_bytes: int, n_workers: int, net: Optional[NetworkParams] = None,
                 t_c: float = 0.0, fixed_bytes: Optional[int] = None, eq5_literal: bool = False,
                 measured_tc: bool = False):
        self.fixed_bytes = fixed_bytes
        self.net = net
        self.n_workers = n_workers
        self.eq5_literal = eq5_literal
        self.measured_tc = measured_tc
        self.model_bytes = model_bytes
        u_max = compute_umax(net, t_c, n_workers, model_bytes, eq5_literal) if net is not None else 0
        self.schedule = SguSchedule(u_max=u_max, model_bytes=model_bytes)
        self.history: List[tuple] = []

    def current(self) -> int:
        if self.fixed_bytes is not None:
            return int(self.fixed_bytes)
        return self.schedule.current_budget

    def on_epoch(self, epoch_index: int, loss: float, t_c: Optional[float] = None) -> int:
        """Feed epoch ``epoch_index`` (1-based) results; the new budget applies from then on."""
        if self.measured_tc and t_c is not None and self.net is not None:
            self.schedule.reset_umax(compute_umax(self.net, t_c, self.n_workers, self.model_bytes, self.eq5_literal))
        budget = tune_sgu(self.schedule, epoch_index, loss)
        self.history.append((epoch_index, float(loss), budget, self.schedule.u_max))
        return self.current()


@dataclass
class _IterAgg:
    contrib: Dict[int, Dict[int, np.ndarray]] = field(default_factory=dict)
    rs_from: set = field(default_factory=set)
    barrier_done: bool = False
    applied: Dict[int, np.ndarray] = field(default_factory=dict)


class OspServer:
    def __init__(self, global_params: LayeredVector, weights: Sequence[float], budget: IcsBudget,
                 delays: ServerDelayProfile = None):
        self.state = ServerState(global_params, list(weights))
        self.partition: LayerPartition = global_params.partition
        self.n = len(self.state.weights)
        self.budget = budget
        self.delays = delays or ServerDelayProfile()
        self.next_barrier = 0
        self.last_complete = -1
        self.budget_at_barrier: Dict[int, int] = {}
        # ICS budget each GIB was built with, keyed by its iteration tag
        self.gib_budget: Dict[int, int] = {0: 0}
        self.on_complete: List[Callable] = []
        self._iters: Dict[int, _IterAgg] = {}
        self._losses: Dict[int, Dict[int, tuple]] = {}

    @property
    def global_params(self) -> LayeredVector:
        return self.state.global_params

    @property
    def dropped_stale(self) -> int:
        return self.state.dropped_stale

    def on_message(self, msg: Message) -> list:
        if msg.kind is MessageKind.LOSS_REPORT:
            return self._on_loss(msg)
        if msg.kind not in (MessageKind.PUSH_IMPORTANT, MessageKind.PUSH_ICS_CHUNK):
            raise ProtocolError(f"OSP server cannot handle {msg.kind}")
        if msg.iteration < self.next_barrier - 1 or msg.iteration <= self.last_complete:
            self.state.dropped_stale += 1
            return []
        it = self._iters.setdefault(msg.iteration, _IterAgg())
        for l, vals in msg.payload.items():
            slot = it.contrib.setdefault(l, {})
            if msg.sender in slot:
                raise ProtocolError(f"worker {msg.sender} sent layer {l} of iteration {msg.iteration} twice")
            slot[msg.sender] = vals
        if msg.kind is MessageKind.PUSH_IMPORTANT:
            it.rs_from.add(msg.sender)
        return self._progress()

    def _on_loss(self, msg: Message) -> list:
        epoch = msg.meta["epoch"]
        reports = self._losses.setdefault(epoch, {})
        reports[msg.sender] = msg.payload
        if len(reports) == self.n:
            losses = [reports[w][0] for w in sorted(reports)]
            tcs = [reports[w][1] for w in sorted(reports)]
            self.budget.on_epoch(epoch + 1, float(np.mean(losses)), float(np.mean(tcs)))
            del self._losses[epoch]
        return []

    def _complete_layers(self, it: _IterAgg) -> list:
        return sorted(l for l, c in it.contrib.items() if len(c) == self.n and l not in it.applied)

    def _aggregate_apply(self, it: _IterAgg, layers: list) -> dict:
        per_worker = {w: {l: it.contrib[l][w] for l in layers} for w in range(self.n)}
        agg = aggregate(per_worker, dict(enumerate(self.state.weights)))
        apply_delta(self.state.global_params, agg, inplace=True)
        for l in layers:
            it.applied[l] = agg[l]
            del it.contrib[l]
        return agg

    def _progress(self) -> list:
        out = []
        changed = True
        while changed:
            changed = False
            for i in sorted(self._iters):
                it = self._iters[i]
                if not it.barrier_done:
                    continue
                layers = self._complete_layers(it)
                if layers:
                    agg = self._aggregate_apply(it, layers)
                    for w in range(self.n):
                        out.append(Send(gradient_message(MessageKind.ICS_GLOBAL_CHUNK, i, agg, self.partition, PS, w)))
                if len(it.applied) == self.partition.num_layers:
                    out += self._finalize(i)
                    changed = True
                    break
            i = self.next_barrier
            it = self._iters.get(i)
            if it is not None and len(it.rs_from) == self.n and self.last_complete == i - 1:
                layers = self._complete_layers(it)
                agg = self._aggregate_apply(it, layers) if layers else {}
                it.barrier_done = True
                self.budget_at_barrier[i] = self.budget.current()
                self.next_barrier += 1
                for w in range(self.n):
                    out.append(Send(gradient_message(MessageKind.PULL_IMPORTANT, i, agg, self.partition, PS, w),
                                    delay=self.delays.agg_delay))
                changed = True
        return out

    def _finalize(self, i: int) -> list:
        it = self._iters.pop(i)
        proxy = np.empty(self.partition.total_count)
        for l, vals in it.applied.items():
            proxy[self.partition.layer_slice(l)] = vals
        # aggregated deltas are -lr * gradient; a positive scale leaves the ranking unchanged
        imp = pgp_layer_importance(self.state.global_params, proxy, self.partition)
        budget = self.budget.current()
        gib = build_gib(imp, self.partition, budget, iteration_tag=i + 1)
        self.gib_budget[i + 1] = budget
        self.state.next_gib = gib
        self.state.importance_accum = dict(imp.scores)
        self.last_complete = i
        full = {l: it.applied[l] for l in sorted(it.applied)}
        for cb in self.on_complete:
            cb(i, full)
        return [Send(gib_message(gib, self.partition.num_layers, w), delay=self.delays.gib_calc_delay,
                     control=self.delays.gib_push_negligible) for w in range(self.n)]


def osp_server_on_push(server: OspServer, msg: Message):
    """Feed one push to the server; returns ``(replies, broadcasts)`` as lists of :class:`Send`.

    Replies are the RS barrier's ``PullImportant`` messages; broadcasts are
    ICS global chunks and GIB updates.
    """
    acts = server.on_message(msg)
    replies = [a for a in acts if a.msg.kind is MessageKind.PULL_IMPORTANT]
    broadcasts = [a for a in acts if a.msg.kind is not MessageKind.PULL_IMPORTANT]
    return replies, broadcasts
