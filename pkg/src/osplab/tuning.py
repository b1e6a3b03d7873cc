"""ICS byte budget: the upper bound from link quality and compute time, and
the per-epoch schedule that grows the budget as the training loss falls."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .errors import ScheduleError

MODEL_FRACTION_CAP = 0.8


@dataclass(frozen=True)
class NetworkParams:
    bandwidth_b: float  # bytes/s
    latency_l: float = 0.0  # seconds
    loss_rate_lr: float = 0.0

    def __post_init__(self):
        if not self.bandwidth_b > 0:
            raise ValueError("bandwidth must be positive")
        if self.latency_l < 0:
            raise ValueError("latency must be non-negative")
        if not 0.0 <= self.loss_rate_lr < 1.0:
            raise ValueError("loss rate must lie in [0, 1)")


def compute_umax(net: NetworkParams, t_c: float, n_workers: int, model_bytes: int, eq5_literal: bool = False) -> int:
    """Largest ICS volume (bytes per worker) that N workers can push within one compute phase.

    Loss inflates traffic by ``1 + lr``, so by default it shrinks the bound;
    ``eq5_literal`` multiplies by ``1 + lr`` instead.  Capped at 80% of the model.
    """
    if t_c < 0:
        raise ValueError("t_c must be non-negative")
    if n_workers < 1:
        raise ValueError("need at least one worker")
    factor = (1.0 + net.loss_rate_lr) if eq5_literal else 1.0 / (1.0 + net.loss_rate_lr)
    raw = net.bandwidth_b * t_c * factor / n_workers
    return int(math.floor(min(raw, MODEL_FRACTION_CAP * model_bytes)))


@dataclass
class SguSchedule:
    u_max: int
    model_bytes: int
    initial_loss_L: Optional[float] = None
    current_budget: int = 0
    epoch: int = 0

    def __post_init__(self):
        cap = int(math.floor(MODEL_FRACTION_CAP * self.model_bytes))
        if self.u_max > cap:
            self.u_max = cap
        if self.u_max < 0:
            raise ValueError("u_max must be non-negative")

    def reset_umax(self, u_max: int) -> None:
        self.u_max = min(int(u_max), int(math.floor(MODEL_FRACTION_CAP * self.model_bytes)))
        self.current_budget = min(self.current_budget, self.u_max)


def tune_sgu(sched: SguSchedule, epoch_index: int, epoch_loss: float) -> int:
    """Budget for ``epoch_index`` (1-based) given that epoch's mean training loss.

    Epoch 1 fixes the reference loss and yields 0.  Later epochs yield
    ``(1 - loss/L) * u_max`` with the factor clamped to [0, 1].
    """
    if epoch_index < 1:
        raise ScheduleError("epochs are numbered from 1")
    if epoch_loss < 0 or not math.isfinite(epoch_loss):
        raise ScheduleError(f"invalid epoch loss {epoch_loss}")
    if epoch_index == 1:
        sched.initial_loss_L = float(epoch_loss)
        budget = 0
    else:
        if sched.initial_loss_L is None:
            raise ScheduleError("schedule not initialised: epoch 1 loss was never recorded")
        L = sched.initial_loss_L
        frac = 0.0 if L <= 0 else min(1.0, max(0.0, 1.0 - epoch_loss / L))
        budget = int(math.floor(frac * sched.u_max))
    sched.current_budget = budget
    sched.epoch = epoch_index
    return budget
