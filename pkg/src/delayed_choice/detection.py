"""Gated avalanche-photodiode model."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .timeline import PulseSchedule

__all__ = ["DetectorParams", "GateOutcome", "dark_probability", "detect"]


@dataclass(frozen=True)
class DetectorParams:
    efficiency: float = 0.6
    dark_rate_d1: float = 59.0  # s^-1
    dark_rate_d2: float = 70.0  # s^-1
    gate_width: float = 40.0  # ns

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError(f"efficiency must lie in [0, 1], got {self.efficiency}")
        if self.dark_rate_d1 < 0 or self.dark_rate_d2 < 0:
            raise ValueError("dark rates must be non-negative")
        if not self.gate_width > 0:
            raise ValueError("gate_width must be positive")

    def dark_rate(self, detector: int) -> float:
        return self.dark_rate_d1 if detector == 1 else self.dark_rate_d2


def dark_probability(rate: float, window_ns: float) -> float:
    """Probability that a Poisson dark process fires at least once in the window."""
    return -math.expm1(-rate * window_ns * 1e-9)


@dataclass(frozen=True)
class GateOutcome:
    d1_hit: bool
    d2_hit: bool

    @property
    def coincidence(self) -> bool:
        return self.d1_hit and self.d2_hit


def detect(arrivals, schedule: PulseSchedule, params: DetectorParams, rng: np.random.Generator) -> GateOutcome:
    """One detection gate.

    ``arrivals`` is an iterable of ``(detector_id, absolute_time_ns)``. Each
    arrival inside the gate registers with probability ``efficiency``; dark
    counts fire independently; a detector reports at most one hit per gate.
    """
    lo, hi = schedule.gate_window
    hit = {1: False, 2: False}
    for det, t in arrivals:
        if det not in hit:
            raise ValueError(f"unknown detector id {det!r}")
        # the efficiency draw is consumed for every arrival to keep streams aligned
        u = rng.random()
        if lo <= t <= hi and u < params.efficiency:
            hit[det] = True
    for det in (1, 2):
        if rng.random() < dark_probability(params.dark_rate(det), params.gate_width):
            hit[det] = True
    return GateOutcome(hit[1], hit[2])
