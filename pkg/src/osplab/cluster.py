"""Drives protocol state machines over the simulated network.

One :class:`Cluster` is one training run: N worker machines, one PS
machine, a :class:`~osplab.netsim.NetSim`, and a training task that turns
parameters plus a batch into a gradient.  The cluster owns the glue that
does not belong to any machine: batching, the learning-rate schedule, loss
reports, R²SP push slots, and turning completed iterations into metric
records.
"""
from __future__ import annotations

import math
from collections import defaultdict
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .config import SYNC_MODELS
from .errors import NumericOverflowError, SimulatorError
from .learner import lr_at_epoch, sgd_delta, shuffle_epoch
from .metrics import IterationRecord, MetricsLog, record_iteration
from .netsim import ComputeProfile, Direction, NetSim, ServerDelayProfile
from .params import LayeredVector, checksum
from .protocol.actions import Ready, Send, Settled, Timer
from .protocol.baselines import FullSyncWorker, make_baseline, r2sp_round_order
from .protocol.core import WorkerState, chunk_count
from .protocol.messages import MessageKind, loss_message
from .protocol.osp import IcsBudget, OspServer, OspWorker
from .tuning import NetworkParams

# barrier-free models report each worker's own wait rather than first-done to last-ready
_PER_WORKER_BST = ("asp", "ssp")


def even_split(n: int, n_workers: int, seed: int) -> List[np.ndarray]:
    """Shuffle sample ids once and cut them into contiguous parts whose sizes differ by at most 1."""
    if n < n_workers:
        raise ValueError(f"{n} samples cannot feed {n_workers} workers")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(p) for p in np.array_split(perm, n_workers)]


def _task_size(task) -> int:
    n = getattr(task, "n_samples", None)
    return int(n) if n is not None else int(task.train.n)


class Cluster:
    def __init__(self, task, sync_model: str, n_workers: int, *, batch_size: int, learning_rate: float,
                 epochs: int, net: NetworkParams, compute: ComputeProfile, delays: ServerDelayProfile = None,
                 init_seed: int = 0, shuffle_seed: int = 0, split_seed: int = 0, max_iterations: int = None,
                 ssp_staleness: int = None, chunk_period: float = None, eq5_literal: bool = False,
                 osp_budget_bytes: int = None, tc_mode: str = "simulated", record_trace: bool = True,
                 check_conservation: bool = False, track_checksums: bool = False,
                 stop_rule: Callable[[Sequence[float]], bool] = None):
        if sync_model not in SYNC_MODELS:
            raise ValueError(f"unknown sync model {sync_model!r}")
        self.task = task
        self.sync_model = sync_model
        self.n = int(n_workers)
        self.batch_size = int(batch_size)
        self.lr0 = float(learning_rate)
        self.shuffle_seed = shuffle_seed
        self.stop_rule = stop_rule
        self.partition = task.partition
        self.net = NetSim(net.bandwidth_b, net.latency_l, net.loss_rate_lr, compute, delays, record_trace)
        self.delays = self.net.delays

        self.subsets = even_split(_task_size(task), self.n, split_seed)
        sizes = [len(s) for s in self.subsets]
        self.weights = [s / float(sum(sizes)) for s in sizes]
        self.iters_per_epoch = max(1, min(sizes) // self.batch_size)
        self.samples_per_iteration = sum(min(self.batch_size, s) for s in sizes)
        cap = epochs * self.iters_per_epoch
        if max_iterations is not None:
            cap = min(cap, int(max_iterations))
        self.last_iteration = cap - 1

        p0 = task.init_params(init_seed)
        self.p0 = p0.copy()
        states = [WorkerState(k, p0.copy(), self.weights[k], rng_seed=shuffle_seed) for k in range(self.n)]
        if sync_model == "osp":
            t_c = compute.t_c_base
            period = chunk_period if chunk_period is not None else t_c / 4.0
            n_chunks = chunk_count(t_c, period) if t_c > 0 and period > 0 else 1
            self.budget = IcsBudget(self.partition.model_bytes, self.n, net, t_c, osp_budget_bytes, eq5_literal,
                                    measured_tc=(tc_mode == "measured"))
            self.server = OspServer(p0.copy(), self.weights, self.budget, self.delays)
            self.workers = [OspWorker(s, n_chunks, period) for s in states]
        else:
            self.budget = None
            self.server, mode = make_baseline(sync_model, p0.copy(), self.weights, self.delays, ssp_staleness)
            self.workers = [FullSyncWorker(s, mode) for s in states]
        self.server.on_complete.append(self._on_complete)

        self.log = MetricsLog(bytes_per_iteration=self.partition.model_bytes * self.n)
        self.accuracies: List[float] = []
        self.global_checksums: Dict[int, str] = {}
        self.worker_checksums: Dict[int, Dict[int, str]] = defaultdict(dict)
        self.conservation_failures: List[tuple] = []
        self.conservation_checks = 0
        self.ssp_max_gap = 0

        self._check_conservation = check_conservation
        self._reference = p0.copy() if check_conservation else None
        self._ref_snap: Dict[int, np.ndarray] = {}
        self._ref_seen: Dict[int, int] = defaultdict(int)
        if check_conservation or track_checksums:
            for w in self.workers:
                w.settle_hook = self._on_settled
        self._track_checksums = track_checksums

        self._delta: Dict[int, tuple] = {}
        self._losses: Dict[int, Dict[int, float]] = defaultdict(dict)
        self._epoch_losses: Dict[int, list] = defaultdict(list)
        self._epoch_tc: Dict[int, list] = defaultdict(list)
        self._started_at: Dict[int, float] = {}
        self._ready: Dict[int, int] = defaultdict(int)
        self._complete: set = set()
        self._acc: Dict[int, Optional[float]] = {}
        self._budget_used: Dict[int, int] = {}
        self._rs_bytes: Dict[int, int] = defaultdict(int)
        self._ics_bytes: Dict[int, int] = defaultdict(int)
        self._next_emit = 0
        self._perm_cache: Dict[tuple, np.ndarray] = {}
        self._r2_queue: Dict[tuple, object] = {}
        self._r2_round = 0
        self._r2_slot = 0
        self._r2_busy = False
        self.push_payload_bytes = 0

    # --- batching ---------------------------------------------------------

    def batch_for(self, worker: int, iteration: int) -> np.ndarray:
        epoch, j = divmod(iteration, self.iters_per_epoch)
        idx = self.subsets[worker]
        key = (worker, epoch)
        perm = self._perm_cache.get(key)
        if perm is None:
            self._perm_cache = {k: v for k, v in self._perm_cache.items() if k[1] >= epoch}
            perm = shuffle_epoch(len(idx), self.shuffle_seed, epoch, worker)
            self._perm_cache[key] = perm
        b = self.batch_size
        return idx[perm[j * b:(j + 1) * b]]

    # --- worker side ------------------------------------------------------

    def _start_iteration(self, k: int, i: int) -> None:
        if i > self.last_iteration:
            return
        w = self.workers[k]
        epoch = i // self.iters_per_epoch
        loss, grad = self.task.gradient(w.state.params, self.batch_for(k, i))
        if not math.isfinite(loss) or not np.all(np.isfinite(grad.values)):
            raise NumericOverflowError(f"worker {k} iteration {i}: non-finite loss or gradient (loss={loss!r})")
        self._delta[k] = (i, sgd_delta(grad, lr_at_epoch(self.lr0, epoch)))
        self._losses[i][k] = float(loss)
        self._started_at[k] = self.net.now
        if self.sync_model == "ssp":
            low = min(self.server.clock) + 1
            self.ssp_max_gap = max(self.ssp_max_gap, i - low)
        self.net.start_compute(k, i, lambda ev, k=k, i=i: self._compute_done(k, i))

    def _compute_done(self, k: int, i: int) -> None:
        if i > self.last_iteration:
            return
        self.net.timeline.mark_compute_done(k, i, self.net.now)
        w = self.workers[k]
        _, delta = self._delta.pop(k)
        if k == 0:
            tag = w.state.current_gib.iteration_tag
            self._budget_used[i] = self.server.gib_budget.get(tag, 0) if self.sync_model == "osp" else 0
        acts = w.on_compute_done(i, delta)
        self._epoch_losses[k].append(self._losses[i][k])
        self._epoch_tc[k].append(self.net.now - self._started_at[k])
        if (i + 1) % self.iters_per_epoch == 0:
            epoch = i // self.iters_per_epoch
            if self.sync_model == "osp":
                acts.append(Send(loss_message(i, epoch, float(np.mean(self._epoch_losses[k])),
                                              float(np.mean(self._epoch_tc[k])), k)))
            self._epoch_losses[k] = []
            self._epoch_tc[k] = []
        self._worker_acts(k, acts)

    def _worker_acts(self, k: int, acts: list) -> None:
        for a in acts:
            if isinstance(a, Send):
                self._send_up(a.msg)
            elif isinstance(a, Timer):
                self.net.timer(a.delay, f"w{k}", lambda ev, k=k, tag=a.tag: self._on_timer(k, tag),
                               f"chunk it={a.tag[1]} c={a.tag[2]}")
            elif isinstance(a, Ready):
                self.net.timeline.mark_ready(k, a.iteration, self.net.now)
                self._ready[a.iteration] += 1
                self._try_emit()
                self._start_iteration(k, a.iteration + 1)
            elif isinstance(a, Settled):
                pass
            else:
                raise SimulatorError(f"unknown worker action {a!r}")

    def _on_timer(self, k: int, tag) -> None:
        self._worker_acts(k, self.workers[k].on_timer(tag))

    def _send_up(self, msg) -> None:
        if self.sync_model == "r2sp" and msg.kind is MessageKind.PUSH_FULL:
            self._r2_queue[(msg.iteration, msg.sender)] = msg
            self._r2sp_pump()
            return
        self._up_flow(msg)

    def _up_flow(self, msg, on_drained=None) -> None:
        self.net.start_flow(Direction.INGRESS, msg.size_bytes, msg,
                            on_arrival=lambda f, m=msg: self._at_server(m), on_drained=on_drained)

    def _r2sp_pump(self) -> None:
        while not self._r2_busy:
            k = r2sp_round_order(self._r2_round, self.n)[self._r2_slot]
            msg = self._r2_queue.pop((self._r2_round, k), None)
            if msg is None:
                return
            self._r2_busy = True
            self._up_flow(msg, on_drained=self._r2sp_drained)

    def _r2sp_drained(self, _flow) -> None:
        self._r2_busy = False
        self._r2_slot += 1
        if self._r2_slot == self.n:
            self._r2_slot = 0
            self._r2_round += 1
        self._r2sp_pump()

    # --- server side ------------------------------------------------------

    def _at_server(self, msg) -> None:
        if msg.kind in (MessageKind.PUSH_IMPORTANT, MessageKind.PUSH_FULL, MessageKind.PUSH_ICS_CHUNK):
            nbytes = sum(self.partition.layer_nbytes(l) for l in msg.payload)
            self.push_payload_bytes += nbytes
            if msg.kind is MessageKind.PUSH_ICS_CHUNK:
                self._ics_bytes[msg.iteration] += nbytes
            else:
                self._rs_bytes[msg.iteration] += nbytes
        acts = self.server.on_message(msg)
        for a in acts:
            if a.control:
                self.net.deliver_after_latency(Direction.EGRESS, a.msg, self._at_worker, a.delay)
            elif a.delay > 0:
                self.net.timer(a.delay, "ps", lambda ev, m=a.msg: self._down_flow(m),
                               f"reply {a.msg.kind.value} it={a.msg.iteration} dst={a.msg.dest}")
            else:
                self._down_flow(a.msg)
        self._try_emit()

    def _down_flow(self, msg) -> None:
        self.net.start_flow(Direction.EGRESS, msg.size_bytes, msg, on_arrival=lambda f, m=msg: self._at_worker(m))

    def _at_worker(self, msg) -> None:
        self._worker_acts(msg.dest, self.workers[msg.dest].on_message(msg))

    def _on_complete(self, i: int, full) -> None:
        gp = self.server.global_params
        if self._check_conservation and full is not None:
            ref = self._reference.values
            for l in sorted(full):
                ref[self.partition.layer_slice(l)] += full[l]
            self._ref_snap[i] = ref.copy()
            if not np.array_equal(ref, gp.values):
                self.conservation_failures.append((i, "global", "server parameters differ from reference"))
        if self._track_checksums:
            self.global_checksums[i] = checksum(gp)
        if (i + 1) % self.iters_per_epoch == 0:
            self._acc[i] = self.task.evaluate(gp)
        self._complete.add(i)

    def _on_settled(self, i: int, params: LayeredVector) -> None:
        k = None
        for w in self.workers:
            if w.state.params is params:
                k = w.worker_id
        if self._track_checksums:
            self.worker_checksums[i][k] = checksum(params)
        if self._check_conservation and i in self._ref_snap:
            self.conservation_checks += 1
            if not np.array_equal(params.values, self._ref_snap[i]):
                self.conservation_failures.append((i, k, "worker parameters differ from reference"))
            self._ref_seen[i] += 1
            if self._ref_seen[i] == self.n:
                del self._ref_snap[i]
                del self._ref_seen[i]

    # --- records ----------------------------------------------------------

    def _try_emit(self) -> None:
        while self._next_emit <= self.last_iteration:
            i = self._next_emit
            if i not in self._complete or self._ready[i] < self.n:
                return
            tl = self.net.timeline
            bst = tl.mean_worker_sync(i) if self.sync_model in _PER_WORKER_BST else tl.measure_bst(i)
            acc = self._acc.pop(i, None)
            rec = IterationRecord(
                iteration=i, sim_time_end=tl.last_ready(i), bst=bst,
                train_loss=float(np.mean([self._losses[i][k] for k in sorted(self._losses[i])])),
                eval_accuracy=acc, sgu_budget_bytes=int(self._budget_used.get(i, 0)),
                rs_bytes=int(self._rs_bytes.pop(i, 0)), ics_bytes=int(self._ics_bytes.pop(i, 0)),
                dropped_stale_msgs=int(self.server.dropped_stale))
            record_iteration(self.log, rec)
            del self._losses[i]
            self._complete.discard(i)
            del self._ready[i]
            self._next_emit += 1
            if acc is not None:
                self.accuracies.append(acc)
                if self.stop_rule is not None and self.stop_rule(self.accuracies):
                    self.last_iteration = i

    def run(self) -> MetricsLog:
        for k in range(self.n):
            self._start_iteration(k, 0)
        self.net.run()
        if self._next_emit <= self.last_iteration:
            raise SimulatorError(f"simulation stalled before iteration {self._next_emit} completed")
        return self.log

    @property
    def trace(self) -> List[str]:
        return self.net.sim.trace or []
