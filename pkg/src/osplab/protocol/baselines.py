"""Baseline synchronization models: BSP, ASP, SSP and R²SP.

All four push the full delta every iteration.  They differ in what the PS
waits for before replying and in what it replies with:

* BSP waits for every worker, then broadcasts the weighted mean delta.
* ASP applies each push on arrival and returns the current parameters.
* SSP is ASP whose reply is held while the worker would run more than
  ``staleness`` iterations ahead of the slowest worker.
* R²SP applies each push (weighted) on arrival and returns parameters, but
  pushes go one at a time in round-robin slots; the slot gate lives in the
  driver because it depends on link state.
"""
from __future__ import annotations

from typing import Dict, List, Sequence

from ..errors import ConfigError, ProtocolError
from ..netsim import ServerDelayProfile
from ..params import LayeredVector, LayerPartition, apply_delta, slice_layers
from .actions import Ready, Send, Settled
from .core import ServerState, WorkerState, aggregate, lgp_partial
from .messages import PS, Message, MessageKind, gradient_message


class FullSyncWorker:
    """Worker side shared by every baseline.

    ``reply_mode`` is ``"delta"`` when the PS answers with an aggregated
    delta (BSP) and ``"params"`` when it answers with the global parameters.
    """

    def __init__(self, state: WorkerState, reply_mode: str = "delta"):
        if reply_mode not in ("delta", "params"):
            raise ValueError(f"unknown reply mode {reply_mode!r}")
        self.state = state
        self.reply_mode = reply_mode
        self.settle_hook = None

    @property
    def worker_id(self) -> int:
        return self.state.worker_id

    def on_compute_done(self, iteration: int, delta: LayeredVector) -> list:
        self.state.iteration = iteration
        part = delta.partition
        payload = slice_layers(delta, part.all_layers())
        return [Send(gradient_message(MessageKind.PUSH_FULL, iteration, payload, part, sender=self.worker_id))]

    def on_message(self, msg: Message) -> list:
        if msg.kind is not MessageKind.PULL_FULL:
            raise ProtocolError(f"baseline worker cannot handle {msg.kind}")
        if self.reply_mode == "delta":
            lgp_partial(self.state, msg.payload, {}, iteration=msg.iteration)
        else:
            part = self.state.params.partition
            for l in sorted(msg.payload):
                self.state.params.values[part.layer_slice(l)] = msg.payload[l]
        if self.settle_hook is not None:
            self.settle_hook(msg.iteration, self.state.params)
        return [Ready(msg.iteration), Settled(msg.iteration)]

    def on_timer(self, tag) -> list:
        return []

    def flush(self) -> list:
        return []


def _full_params_payload(params: LayeredVector) -> dict:
    return slice_layers(params, params.partition.all_layers())


class _ServerBase:
    def __init__(self, global_params: LayeredVector, weights: Sequence[float], delays: ServerDelayProfile = None):
        self.state = ServerState(global_params, list(weights))
        self.partition: LayerPartition = global_params.partition
        self.n = len(self.state.weights)
        self.delays = delays or ServerDelayProfile()
        self.on_complete: List = []
        self.budget_at_barrier: Dict[int, int] = {}

    @property
    def global_params(self) -> LayeredVector:
        return self.state.global_params

    @property
    def dropped_stale(self) -> int:
        return self.state.dropped_stale

    def _check_kind(self, msg: Message):
        if msg.kind is not MessageKind.PUSH_FULL:
            raise ProtocolError(f"{type(self).__name__} cannot handle {msg.kind}")

    def _reply(self, iteration: int, payload: dict, dest: int) -> Send:
        return Send(gradient_message(MessageKind.PULL_FULL, iteration, payload, self.partition, PS, dest),
                    delay=self.delays.agg_delay)


class BspServer(_ServerBase):
    def __init__(self, global_params, weights, delays=None):
        super().__init__(global_params, weights, delays)
        self.current = 0
        self._buf: Dict[int, dict] = {}

    def on_message(self, msg: Message) -> list:
        self._check_kind(msg)
        if msg.iteration < self.current:
            self.state.dropped_stale += 1
            return []
        if msg.iteration > self.current:
            raise ProtocolError(f"push for iteration {msg.iteration} while iteration {self.current} is open")
        self._buf[msg.sender] = msg.payload
        if len(self._buf) < self.n:
            return []
        agg = aggregate(self._buf, dict(enumerate(self.state.weights)))
        apply_delta(self.state.global_params, agg, inplace=True)
        i = self.current
        self._buf = {}
        self.current += 1
        self.budget_at_barrier[i] = 0
        for cb in self.on_complete:
            cb(i, agg)
        return [self._reply(i, agg, w) for w in range(self.n)]


class AspServer(_ServerBase):
    """Applies every push in full as it arrives and returns the parameters.

    With ``staleness`` set this becomes SSP: the reply to a worker that has
    just pushed iteration ``i`` is held until ``i + 1`` is at most
    ``staleness`` ahead of the iteration the slowest worker is computing.
    """

    def __init__(self, global_params, weights, delays=None, staleness=None):
        super().__init__(global_params, weights, delays)
        if staleness is not None and staleness < 0:
            raise ConfigError("ssp_staleness", f"must be >= 0, got {staleness}")
        self.staleness = staleness
        # last iteration each worker pushed
        self.clock = [-1] * self.n
        self._held: Dict[int, int] = {}
        self._applied: Dict[int, int] = {}

    def _scale(self, sender: int) -> float:
        return 1.0

    def min_computing(self) -> int:
        return min(c + 1 for c in self.clock)

    def on_message(self, msg: Message) -> list:
        self._check_kind(msg)
        w = msg.sender
        if msg.iteration <= self.clock[w]:
            self.state.dropped_stale += 1
            return []
        if msg.iteration != self.clock[w] + 1:
            raise ProtocolError(f"worker {w} skipped from iteration {self.clock[w]} to {msg.iteration}")
        apply_delta(self.state.global_params, msg.payload, scale=self._scale(w), inplace=True)
        self.clock[w] = msg.iteration
        i = msg.iteration
        self._applied[i] = self._applied.get(i, 0) + 1
        if self._applied[i] == self.n:
            del self._applied[i]
            self.budget_at_barrier[i] = 0
            for cb in self.on_complete:
                cb(i, None)
        self._held[w] = i
        return self._release()

    def _release(self) -> list:
        out = []
        low = self.min_computing()
        for w in sorted(self._held):
            i = self._held[w]
            if self.staleness is None or (i + 1) - low <= self.staleness:
                out.append(self._reply(i, _full_params_payload(self.state.global_params), w))
        for s in out:
            del self._held[s.msg.dest]
        return out


class R2spServer(AspServer):
    """Per-push weighted update; one round of pushes moves the model like one BSP step."""

    def __init__(self, global_params, weights, delays=None):
        super().__init__(global_params, weights, delays, staleness=None)
        total = float(sum(self.state.weights))
        self._w = [float(x) / total for x in self.state.weights]

    def _scale(self, sender: int) -> float:
        return self._w[sender]


def r2sp_slot(worker: int, iteration: int, n_workers: int) -> int:
    """Push slot of ``worker`` within round ``iteration``."""
    return (worker + iteration) % n_workers


def r2sp_round_order(iteration: int, n_workers: int) -> List[int]:
    """Workers in the order they push during round ``iteration``."""
    return sorted(range(n_workers), key=lambda k: r2sp_slot(k, iteration, n_workers))


def make_baseline(sync_model: str, global_params: LayeredVector, weights: Sequence[float],
                  delays: ServerDelayProfile = None, staleness: int = None):
    """Server instance and worker reply mode for a baseline model name."""
    if sync_model == "bsp":
        return BspServer(global_params, weights, delays), "delta"
    if sync_model == "asp":
        return AspServer(global_params, weights, delays), "params"
    if sync_model == "ssp":
        if staleness is None:
            raise ConfigError("ssp_staleness", "required for ssp")
        return AspServer(global_params, weights, delays, staleness=staleness), "params"
    if sync_model == "r2sp":
        return R2spServer(global_params, weights, delays), "params"
    raise ConfigError("sync_model", f"unknown baseline {sync_model!r}")
