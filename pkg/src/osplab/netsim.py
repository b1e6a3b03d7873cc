"""Deterministic discrete-event model of a star network around one PS.

The PS has one ingress and one egress link.  Concurrent flows on a link share
its bandwidth equally (processor sharing), which is what makes many-to-one
pushes slow down together (incast).  Packet loss is folded in as an expected
retransmission overhead, so a flow of ``s`` bytes moves ``s * (1 + lr)``.
A flow occupies its link while draining and is delivered ``latency`` after
the last byte leaves.
"""
from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .errors import SimulatorError

COMPUTE_DONE = "ComputeDone"
FLOW_ARRIVED = "FlowArrived"
TIMER_FIRED = "TimerFired"


class Direction(str, Enum):
    INGRESS = "ingress"  # worker -> PS
    EGRESS = "egress"  # PS -> worker


@dataclass(order=True)
class SimEvent:
    time: float
    seq: int
    kind: str = field(compare=False)
    subject: str = field(compare=False)
    detail: str = field(compare=False, default="")
    action: Optional[Callable] = field(compare=False, default=None, repr=False)
    cancelled: bool = field(compare=False, default=False)

    def trace_line(self) -> str:
        return f"{self.time!r}\t{self.seq}\t{self.kind}\t{self.subject}\t{self.detail}"


class Simulator:
    """Event queue ordered by ``(time, seq)``; ``seq`` is insertion order."""

    def __init__(self, record_trace: bool = True):
        self.now = 0.0
        self._queue: List[SimEvent] = []
        self._seq = itertools.count()
        self.trace: Optional[List[str]] = [] if record_trace else None
        self.processed = 0

    def schedule(self, time: float, kind: str, subject, action: Callable = None, detail: str = "") -> SimEvent:
        if not time >= self.now:
            raise SimulatorError(f"cannot schedule {kind} at {time!r}, clock is at {self.now!r}")
        ev = SimEvent(float(time), next(self._seq), kind, str(subject), detail, action)
        heapq.heappush(self._queue, ev)
        return ev

    def schedule_in(self, delay: float, kind: str, subject, action: Callable = None, detail: str = "") -> SimEvent:
        if delay < 0:
            raise SimulatorError(f"negative delay {delay!r}")
        return self.schedule(self.now + delay, kind, subject, action, detail)

    def next_event(self) -> Optional[SimEvent]:
        """Pop the next live event and advance the clock; ``None`` ends the simulation."""
        while self._queue:
            ev = heapq.heappop(self._queue)
            if ev.cancelled:
                continue
            self.now = ev.time
            self.processed += 1
            if self.trace is not None:
                self.trace.append(ev.trace_line())
            return ev
        return None

    def run(self, until: Optional[float] = None, max_events: Optional[int] = None) -> None:
        count = 0
        while self._queue:
            if until is not None and self._peek_time() > until:
                return
            ev = self.next_event()
            if ev is None:
                return
            if ev.action is not None:
                ev.action(ev)
            count += 1
            if max_events is not None and count >= max_events:
                return

    def _peek_time(self) -> float:
        while self._queue and self._queue[0].cancelled:
            heapq.heappop(self._queue)
        return self._queue[0].time if self._queue else float("inf")

    def pending(self) -> int:
        return sum(1 for ev in self._queue if not ev.cancelled)

    def dump_trace(self, path) -> None:
        Path(path).write_text("".join(line + "\n" for line in (self.trace or [])), encoding="utf-8")


@dataclass
class Flow:
    flow_id: int
    link: str
    size_bytes: float
    effective_bytes: float
    remaining_bytes: float
    message: object = None
    started_at: float = 0.0
    drained_at: Optional[float] = None
    delivered_at: Optional[float] = None
    on_arrival: Optional[Callable] = field(default=None, repr=False)
    on_drained: Optional[Callable] = field(default=None, repr=False)


class LinkResource:
    def __init__(self, sim: Simulator, name: str, direction: Direction, bandwidth: float,
                 latency: float = 0.0, loss_rate: float = 0.0, flow_ids=None):
        if not bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if latency < 0 or not 0 <= loss_rate < 1:
            raise ValueError("latency must be >= 0 and loss rate in [0, 1)")
        self.sim = sim
        self.name = name
        self.direction = Direction(direction)
        self.bandwidth = float(bandwidth)
        self.latency = float(latency)
        self.loss_rate = float(loss_rate)
        self.active_flows: Dict[int, Flow] = {}
        self.delivered_bytes = 0.0
        self.started_bytes = 0.0
        self.completed: List[Flow] = []
        self._flow_ids = flow_ids if flow_ids is not None else itertools.count()
        self._last = 0.0
        self._drain_ev: Optional[SimEvent] = None

    def start_flow(self, size_bytes: float, message=None, on_arrival: Callable = None,
                   on_drained: Callable = None) -> int:
        if not size_bytes > 0:
            raise ValueError("flow size must be positive")
        self._advance()
        eff = float(size_bytes) * (1.0 + self.loss_rate)
        fid = next(self._flow_ids)
        self.active_flows[fid] = Flow(fid, self.name, float(size_bytes), eff, eff, message,
                                      self.sim.now, on_arrival=on_arrival, on_drained=on_drained)
        self.started_bytes += eff
        self._reschedule()
        return fid

    def rate_per_flow(self) -> float:
        return self.bandwidth / len(self.active_flows) if self.active_flows else self.bandwidth

    def _advance(self) -> None:
        now = self.sim.now
        if self.active_flows and now > self._last:
            moved = (now - self._last) * self.bandwidth / len(self.active_flows)
            for f in self.active_flows.values():
                f.remaining_bytes -= moved
        self._last = now

    def _reschedule(self) -> None:
        if self._drain_ev is not None:
            self._drain_ev.cancelled = True
            self._drain_ev = None
        if not self.active_flows:
            return
        rem = min(f.remaining_bytes for f in self.active_flows.values())
        dt = max(rem, 0.0) * len(self.active_flows) / self.bandwidth
        self._drain_ev = self.sim.schedule(self.sim.now + dt, TIMER_FIRED, self.name, self._on_drain, "drain")

    def _on_drain(self, _ev) -> None:
        self._drain_ev = None
        self._advance()
        done = [f for f in self.active_flows.values() if f.remaining_bytes <= 1e-9 * f.effective_bytes + 1e-6]
        for f in done:
            f.remaining_bytes = 0.0
            f.drained_at = self.sim.now
            del self.active_flows[f.flow_id]
            self.delivered_bytes += f.effective_bytes
            detail = _flow_detail(f)
            self.sim.schedule(self.sim.now + self.latency, FLOW_ARRIVED, f"flow{f.flow_id}",
                              lambda ev, f=f: self._deliver(f), detail)
        self._reschedule()
        for f in done:
            if f.on_drained is not None:
                f.on_drained(f)

    def _deliver(self, f: Flow) -> None:
        f.delivered_at = self.sim.now
        self.completed.append(f)
        if f.on_arrival is not None:
            f.on_arrival(f)


def _flow_detail(f: Flow) -> str:
    msg = f.message
    if msg is None:
        return f"{f.link} bytes={f.size_bytes!r}"
    return f"{f.link} {msg.kind.value} it={msg.iteration} src={msg.sender} dst={msg.dest} bytes={f.size_bytes!r}"


@dataclass(frozen=True)
class ComputeProfile:
    t_c_base: float
    straggler_multipliers: tuple = ()
    jitter_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "straggler_multipliers", tuple(float(m) for m in self.straggler_multipliers))
        if self.t_c_base < 0:
            raise ValueError("t_c_base must be non-negative")
        if any(not np.isfinite(m) or m < 1.0 for m in self.straggler_multipliers):
            raise ValueError("straggler multipliers must be finite and >= 1")
        if self.jitter_fraction < 0:
            raise ValueError("jitter_fraction must be non-negative")

    def multiplier(self, worker: int) -> float:
        m = self.straggler_multipliers
        return m[worker] if worker < len(m) else 1.0

    def jitter(self, worker: int, iteration: int) -> float:
        if self.jitter_fraction == 0.0:
            return 0.0
        rng = np.random.default_rng([int(self.seed), int(worker), int(iteration)])
        return float(rng.uniform(-self.jitter_fraction, self.jitter_fraction))

    def duration(self, worker: int, iteration: int) -> float:
        return self.t_c_base * self.multiplier(worker) * (1.0 + self.jitter(worker, iteration))


@dataclass(frozen=True)
class ServerDelayProfile:
    agg_delay: float = 0.0
    gib_calc_delay: float = 0.0
    gib_push_negligible: bool = True

    def __post_init__(self):
        if self.agg_delay < 0 or self.gib_calc_delay < 0:
            raise ValueError("server delays must be non-negative")


class SyncTimeline:
    """Per-iteration compute-finish and ready instants, used for BST."""

    def __init__(self):
        self.compute_done: Dict[int, Dict[int, float]] = {}
        self.ready: Dict[int, Dict[int, float]] = {}

    def mark_compute_done(self, worker: int, iteration: int, t: float) -> None:
        self.compute_done.setdefault(iteration, {})[worker] = t

    def mark_ready(self, worker: int, iteration: int, t: float) -> None:
        """``worker`` finished synchronising ``iteration`` and may compute the next one."""
        self.ready.setdefault(iteration, {})[worker] = t

    def measure_bst(self, iteration: int) -> float:
        """Last worker ready after ``iteration`` minus first worker done computing it."""
        done = self.compute_done.get(iteration)
        ready = self.ready.get(iteration)
        if not done or not ready:
            raise SimulatorError(f"iteration {iteration} has not completed")
        return max(ready.values()) - min(done.values())

    def mean_worker_sync(self, iteration: int) -> float:
        """Mean over workers of their own ready - compute_done gap (barrier-free protocols)."""
        done = self.compute_done[iteration]
        ready = self.ready[iteration]
        return float(np.mean([ready[w] - done[w] for w in sorted(ready)]))

    def last_ready(self, iteration: int) -> float:
        return max(self.ready[iteration].values())


class NetSim:
    """Simulator plus the PS's two links, a compute model and server delays."""

    def __init__(self, bandwidth: float, latency: float = 0.0, loss_rate: float = 0.0,
                 compute: ComputeProfile = None, delays: ServerDelayProfile = None,
                 record_trace: bool = True):
        self.sim = Simulator(record_trace)
        ids = itertools.count()
        self.ingress = LinkResource(self.sim, "ingress", Direction.INGRESS, bandwidth, latency, loss_rate, ids)
        self.egress = LinkResource(self.sim, "egress", Direction.EGRESS, bandwidth, latency, loss_rate, ids)
        self.compute = compute or ComputeProfile(0.0)
        self.delays = delays or ServerDelayProfile()
        self.timeline = SyncTimeline()

    @property
    def now(self) -> float:
        return self.sim.now

    def link(self, direction: Direction) -> LinkResource:
        return self.ingress if Direction(direction) is Direction.INGRESS else self.egress

    def start_compute(self, worker: int, iteration: int, on_done: Callable) -> SimEvent:
        dur = self.compute.duration(worker, iteration)
        return self.sim.schedule(self.sim.now + dur, COMPUTE_DONE, f"w{worker}", on_done, f"it={iteration}")

    def start_flow(self, direction: Direction, size_bytes: float, message=None,
                   on_arrival: Callable = None, on_drained: Callable = None) -> int:
        return self.link(direction).start_flow(size_bytes, message, on_arrival, on_drained)

    def deliver_after_latency(self, direction: Direction, message, on_arrival: Callable, delay: float = 0.0) -> SimEvent:
        """Out-of-band delivery that does not occupy link bandwidth (negligible-size control data)."""
        lat = self.link(direction).latency
        detail = f"{direction.value if isinstance(direction, Direction) else direction} control {message.kind.value} it={message.iteration} dst={message.dest}"
        return self.sim.schedule(self.sim.now + delay + lat, FLOW_ARRIVED, "control", lambda ev: on_arrival(message), detail)

    def timer(self, delay: float, subject, action: Callable, detail: str = "") -> SimEvent:
        return self.sim.schedule_in(delay, TIMER_FIRED, subject, action, detail)

    def run(self, **kw) -> None:
        self.sim.run(**kw)


def closed_form_bsp_bst(n_workers: int, model_bytes: float, bandwidth: float, latency: float, agg_delay: float = 0.0) -> float:
    return 2.0 * n_workers * model_bytes / bandwidth + agg_delay + 2.0 * latency


def closed_form_osp_bst(n_workers: int, model_bytes: float, rs_fraction: float, bandwidth: float,
                        latency: float, agg_delay: float = 0.0) -> float:
    return 2.0 * n_workers * rs_fraction * model_bytes / bandwidth + agg_delay + 2.0 * latency
