"""Per-trigger FPGA schedule and special-relativistic checks.

Positions are metres along the interferometer axis (input splitter at 0,
output station at ``interferometer_length``); times are nanoseconds in the
laboratory frame.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "C_M_PER_NS",
    "ScheduleError",
    "TimingParams",
    "PulseSchedule",
    "SpacetimeEvent",
    "Interval",
    "build_schedule",
    "interval_class",
    "lightcone_entry",
    "boost",
    "AuditReport",
    "causality_audit",
    "gated_delay_limit",
]

C_M_PER_NS = 0.299792458


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class TimingParams:
    clock_period: float = 238.0
    flight_time: float = 160.0
    gate_width: float = 40.0
    eom_commute_start: float = 85.0
    eom_commute_width: float = 40.0
    interferometer_length: float = 48.0
    jitter: float = 0.0  # gaussian sigma of the gate timing, ns; 0 disables

    @property
    def c(self) -> float:
        return C_M_PER_NS

    def validate(self) -> "TimingParams":
        if not self.gate_width > 0:
            raise ScheduleError(f"gate_width must be positive, got {self.gate_width}")
        if not self.clock_period > 0:
            raise ScheduleError(f"clock_period must be positive, got {self.clock_period}")
        expected = self.interferometer_length / C_M_PER_NS
        if abs(self.flight_time - expected) > 0.01 * expected:
            raise ScheduleError(
                f"flight_time {self.flight_time} ns inconsistent with "
                f"{self.interferometer_length} m / c = {expected:.2f} ns"
            )
        if self.eom_commute_start + self.eom_commute_width > self.flight_time:
            raise ScheduleError("EOM must settle before the photon reaches the output")
        if self.eom_commute_start < 0 or self.eom_commute_width < 0:
            raise ScheduleError("EOM timing must be non-negative")
        # one photon pulse in flight at a time
        if not self.flight_time < self.clock_period:
            raise ScheduleError("flight_time must be shorter than clock_period")
        if self.flight_time + self.gate_width > self.clock_period:
            raise ScheduleError("detection gate overlaps the next clock period")
        if self.jitter < 0:
            raise ScheduleError("jitter must be non-negative")
        return self


def gated_delay_limit(timing: TimingParams) -> float:
    """Latest emission delay whose photon still lands inside the gate."""
    return timing.gate_width


@dataclass(frozen=True)
class PulseSchedule:
    trigger_time: float
    qrng_draw_time: float
    eom_window: tuple[float, float]
    gate_window: tuple[float, float]


def build_schedule(
    n: int, params: TimingParams = TimingParams(), rng: np.random.Generator | None = None
) -> PulseSchedule:
    if n < 0:
        raise ScheduleError(f"trigger index must be >= 0, got {n}")
    params.validate()
    t0 = n * params.clock_period
    shift = 0.0
    if params.jitter > 0 and rng is not None:
        shift = float(rng.normal(0.0, params.jitter))
    gate_open = t0 + params.flight_time + shift
    eom = (t0 + params.eom_commute_start, t0 + params.eom_commute_start + params.eom_commute_width)
    if eom[1] > gate_open:
        raise ScheduleError(f"pulse {n}: EOM still switching when the gate opens")
    return PulseSchedule(
        trigger_time=t0,
        qrng_draw_time=t0,
        eom_window=eom,
        gate_window=(gate_open, gate_open + params.gate_width),
    )


@dataclass(frozen=True)
class SpacetimeEvent:
    x: float
    t: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.t)):
            raise ValueError("spacetime coordinates must be finite")


class Interval(enum.Enum):
    SPACE_LIKE = "space_like"
    TIME_LIKE = "time_like"
    LIGHT_LIKE = "light_like"


def interval_class(a: SpacetimeEvent, b: SpacetimeEvent, rtol: float = 1e-9) -> Interval:
    dx = abs(b.x - a.x)
    ct = C_M_PER_NS * abs(b.t - a.t)
    if math.isclose(dx, ct, rel_tol=rtol, abs_tol=0.0) or dx == ct:
        return Interval.LIGHT_LIKE
    return Interval.SPACE_LIKE if dx > ct else Interval.TIME_LIKE


def boost(ev: SpacetimeEvent, beta: float) -> SpacetimeEvent:
    """1-D Lorentz boost with velocity ``beta * c`` along +x."""
    gamma = 1.0 / math.sqrt(1.0 - beta * beta)
    ct = C_M_PER_NS * ev.t
    x2 = gamma * (ev.x - beta * ct)
    ct2 = gamma * (ct - beta * ev.x)
    return SpacetimeEvent(x2, ct2 / C_M_PER_NS)


def lightcone_entry(
    choice: SpacetimeEvent, photon_start: SpacetimeEvent, length: float = 48.0
) -> tuple[float, float] | None:
    """Where a photon moving at c toward +x enters the future light cone of ``choice``.

    Returns ``(x, t)``, or ``None`` when the worldline does not enter the cone
    inside the interferometer.
    """
    c = C_M_PER_NS
    x0, t0 = photon_start.x, photon_start.t
    xc, tc = choice.x, choice.t
    if x0 < xc:
        # closing on the choice point: |x - xc| shrinks at c while the cone grows at c
        t = 0.5 * ((xc - x0) / c + t0 + tc)
        t = max(t, t0, tc)
    elif x0 - xc <= c * (t0 - tc):
        t = t0
    else:
        return None
    x = x0 + c * (t - t0)
    if x < 0.0 or x > length + 1e-12:
        return None
    return x, t


@dataclass
class AuditReport:
    n_pulses: int
    violations: list[tuple[int, str]]
    entry_margin: np.ndarray  # |dx| - c|dt| for (entry, choice), metres
    inflight_distance: np.ndarray  # photon distance from the input at commutation start
    clearance: np.ndarray  # length - inflight_distance
    delays: np.ndarray

    @property
    def n_violations(self) -> int:
        return len(self.violations)


def causality_audit(
    schedules: list[PulseSchedule] | None,
    delays,
    params: TimingParams = TimingParams(),
    trigger_times=None,
) -> AuditReport:
    """Check every pulse for space-like separation of photon entry and choice.

    Pass either a list of schedules or, for large audits, an array of trigger
    times; ``delays`` holds one emission delay per pulse.
    """
    params.validate()
    delays = np.asarray(delays, dtype=float)
    if schedules is not None:
        t_trig = np.array([s.trigger_time for s in schedules], dtype=float)
        eom_end = np.array([s.eom_window[1] for s in schedules], dtype=float)
        gate_open = np.array([s.gate_window[0] for s in schedules], dtype=float)
    else:
        t_trig = np.asarray(trigger_times, dtype=float)
        eom_end = t_trig + params.eom_commute_start + params.eom_commute_width
        gate_open = t_trig + params.flight_time
    if t_trig.shape != delays.shape:
        raise ValueError("need exactly one emission delay per pulse")
    L = params.interferometer_length
    c = C_M_PER_NS
    # entry (x=0, t=trigger+delay) against choice (x=L, t=trigger)
    entry_margin = L - c * np.abs(delays)
    inflight = c * (params.eom_commute_start - delays)
    clearance = L - inflight

    violations: list[tuple[int, str]] = []
    bad = np.flatnonzero(~(entry_margin > 0) | np.isclose(entry_margin, 0.0, atol=1e-9 * L))
    violations += [(int(i), "photon entry not space-like separated from choice") for i in bad]
    late = np.flatnonzero(eom_end > gate_open)
    violations += [(int(i), "EOM not settled before gate opens") for i in late]
    violations.sort()
    return AuditReport(len(delays), violations, entry_margin, inflight, clearance, delays)
