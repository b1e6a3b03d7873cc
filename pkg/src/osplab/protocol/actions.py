"""What a protocol state machine asks its driver to do.

Machines never touch the clock or the network directly; they return a list
of these and the driver (the simulated cluster, or a real transport) acts.
"""
from dataclasses import dataclass

from .messages import Message


@dataclass
class Send:
    msg: Message
    delay: float = 0.0
    # control-plane data too small to occupy link bandwidth
    control: bool = False


@dataclass
class Timer:
    delay: float
    tag: tuple


@dataclass
class Ready:
    """The worker finished synchronising ``iteration`` and may compute the next one."""
    iteration: int


@dataclass
class Settled:
    """Every layer of ``iteration`` now holds its global value on this worker."""
    iteration: int
