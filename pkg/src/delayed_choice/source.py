"""Triggered single-photon source with Poissonian background light.

Photon numbers and delays are lumped post-collection quantities: ``p_emit``
is the probability that a trigger delivers one signal photon to the
interferometer input, and ``mu_bg`` the mean number of background photons
(photoluminescence and Raman) per trigger. Both decay with the same
excited-state lifetime, since both are pump-synchronous.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from .detection import DetectorParams, dark_probability
from .timeline import TimingParams, gated_delay_limit

__all__ = [
    "CalibrationError",
    "EmitterParams",
    "EmissionEvent",
    "emit",
    "emit_batch",
    "gate_acceptance",
    "sample_delays",
    "sample_first_delays",
    "ClickModel",
    "click_model",
    "calibrate",
    "calibrate_overlap",
    "expected_fringe_visibility",
]

log = logging.getLogger(__name__)

SINGLE_PHOTON = "single_photon"
POISSONIAN = "poissonian"


class CalibrationError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class EmitterParams:
    tau_sp: float = 44.5  # ns
    p_emit: float = 8.6494e-4  # calibrated: 700 counts/s per detector, alpha 0.12
    mu_bg: float = 5.7089e-5
    mode: str = SINGLE_PHOTON
    poisson_mean: float = 0.0

    def __post_init__(self):
        if not self.tau_sp > 0:
            raise ValueError(f"tau_sp must be positive, got {self.tau_sp}")
        if not 0.0 <= self.p_emit <= 1.0:
            raise ValueError(f"p_emit must lie in [0, 1], got {self.p_emit}")
        if self.mu_bg < 0:
            raise ValueError(f"mu_bg must be non-negative, got {self.mu_bg}")
        if self.mode not in (SINGLE_PHOTON, POISSONIAN):
            raise ValueError(f"unknown emitter mode {self.mode!r}")
        if self.poisson_mean < 0:
            raise ValueError("poisson_mean must be non-negative")


@dataclass(frozen=True)
class EmissionEvent:
    n_signal: int
    n_background: int
    delays: tuple[float, ...] = field(default_factory=tuple)

    @property
    def n_photons(self) -> int:
        return self.n_signal + self.n_background


def emit(params: EmitterParams, rng: np.random.Generator) -> EmissionEvent:
    """Photon content of one trigger; signal delays come first in ``delays``."""
    if params.mode == SINGLE_PHOTON:
        n_sig = int(rng.random() < params.p_emit)
    else:
        n_sig = int(rng.poisson(params.poisson_mean))
    n_bg = int(rng.poisson(params.mu_bg))
    delays = rng.exponential(params.tau_sp, size=n_sig + n_bg)
    return EmissionEvent(n_sig, n_bg, tuple(float(d) for d in delays))


def emit_batch(params: EmitterParams, n: int, rng: np.random.Generator):
    """Vectorized ``emit`` for ``n`` triggers.

    Returns ``(n_signal, n_background, delays)`` where ``delays`` lists the
    photons trigger by trigger, signal first.
    """
    if params.mode == SINGLE_PHOTON:
        n_sig = (rng.random(n) < params.p_emit).astype(np.int64)
    else:
        n_sig = rng.poisson(params.poisson_mean, size=n).astype(np.int64)
    n_bg = rng.poisson(params.mu_bg, size=n).astype(np.int64)
    delays = rng.exponential(params.tau_sp, size=int(n_sig.sum() + n_bg.sum()))
    return n_sig, n_bg, delays


def gate_acceptance(tau_sp: float, limit: float | None) -> float:
    """Fraction of emitted photons whose delay falls below ``limit`` (None = ungated)."""
    if limit is None:
        return 1.0
    return -math.expm1(-limit / tau_sp)


def sample_delays(rng: np.random.Generator, tau: float, limit: float | None, size: int) -> np.ndarray:
    """Exponential delays, truncated to ``[0, limit]`` when a limit is given."""
    u = rng.random(size)
    if limit is None:
        return -tau * np.log1p(-u)
    return -tau * np.log1p(-u * gate_acceptance(tau, limit))


def sample_first_delays(rng, tau: float, limit: float | None, counts: np.ndarray) -> np.ndarray:
    """Earliest of ``counts[i]`` independent (truncated) exponential delays."""
    counts = np.asarray(counts)
    u = rng.random(counts.size)
    # the minimum of k iid variables has survival S(t)^k
    v = -np.expm1(np.log1p(-u) / counts)
    if limit is None:
        return -tau * np.log1p(-v)
    return -tau * np.log1p(-v * gate_acceptance(tau, limit))


@dataclass(frozen=True)
class ClickModel:
    """Expected per-gate click probabilities for fixed routing probabilities.

    ``q*`` are photon-only probabilities, ``P*`` include dark counts.
    """

    q1: float
    q2: float
    q12: float
    P1: float
    P2: float
    P12: float

    @property
    def alpha_photon(self) -> float:
        return self.q12 / (self.q1 * self.q2)

    @property
    def alpha_raw(self) -> float:
        return self.P12 / (self.P1 * self.P2)


def click_model(
    emitter: EmitterParams,
    detector: DetectorParams,
    timing: TimingParams,
    signal_routing=(0.5, 0.5),
    background_routing=(0.5, 0.5),
    gated: bool = True,
) -> ClickModel:
    limit = gated_delay_limit(timing) if gated else None
    window = detector.gate_width if gated else timing.clock_period
    g = gate_acceptance(emitter.tau_sp, limit)
    eta = detector.efficiency
    p1, p2 = signal_routing
    r1, r2 = background_routing
    lam1 = emitter.mu_bg * eta * g * r1
    lam2 = emitter.mu_bg * eta * g * r2
    if emitter.mode == SINGLE_PHOTON:
        s = emitter.p_emit * eta * g
        none1 = (1 - s * p1) * math.exp(-lam1)
        none2 = (1 - s * p2) * math.exp(-lam2)
        none12 = (1 - s * (p1 + p2)) * math.exp(-lam1 - lam2)
    else:
        m = emitter.poisson_mean * eta * g
        none1 = math.exp(-lam1 - m * p1)
        none2 = math.exp(-lam2 - m * p2)
        none12 = none1 * none2
    d1 = dark_probability(detector.dark_rate_d1, window)
    d2 = dark_probability(detector.dark_rate_d2, window)
    q1, q2 = 1 - none1, 1 - none2
    q12 = 1 - none1 - none2 + none12
    N1, N2, N12 = none1 * (1 - d1), none2 * (1 - d2), none12 * (1 - d1) * (1 - d2)
    P1, P2 = 1 - N1, 1 - N2
    return ClickModel(q1, q2, q12, P1, P2, 1 - N1 - N2 + N12)


def calibrate(
    target_rate_per_detector: float,
    target_alpha: float,
    timing: TimingParams = TimingParams(),
    detector: DetectorParams = DetectorParams(),
    tau_sp: float = 44.5,
) -> EmitterParams:
    """Solve for ``(p_emit, mu_bg)`` matching an open-configuration count rate and alpha.

    ``target_rate_per_detector`` is the raw (darks included) rate in s^-1,
    averaged over the two detectors. ``target_alpha`` is the dark-corrected
    anticorrelation parameter reported by the analysis. The search works on the
    exact expected click probabilities, so it is deterministic.
    """
    timing.validate()
    if not 0.0 <= target_alpha < 1.0:
        raise CalibrationError(f"target_alpha must lie in [0, 1), got {target_alpha}")
    r = target_rate_per_detector * timing.clock_period * 1e-9
    base = EmitterParams(tau_sp=tau_sp, p_emit=0.0, mu_bg=0.0)
    if not 0 < r < 1:
        raise CalibrationError("target rate outside (0, 1 / clock_period)", {"per_gate": r})

    def model(p, mu):
        return click_model(replace(base, p_emit=p, mu_bg=mu), detector, timing)

    def mean_rate(p, mu):
        m = model(p, mu)
        return 0.5 * (m.P1 + m.P2)

    diag = {"target_per_gate": r}
    if mean_rate(1.0, 0.0) < r:
        raise CalibrationError("target rate above what one photon per trigger can give", diag)
    if mean_rate(0.0, 0.0) >= r:
        raise CalibrationError("target rate below the dark-count floor", diag)

    def p_for(mu):
        return brentq(lambda p: mean_rate(p, mu) - r, 0.0, 1.0, xtol=1e-15, rtol=1e-13)

    if target_alpha == 0.0:
        return replace(base, p_emit=p_for(0.0), mu_bg=0.0)

    # background-only light reaching the target rate bounds the search
    mu_hi = brentq(lambda mu: mean_rate(0.0, mu) - r, 0.0, 50.0, xtol=1e-15, rtol=1e-13)

    def alpha_at(mu):
        if mu >= mu_hi:
            return model(0.0, mu_hi).alpha_photon
        return model(p_for(mu), mu).alpha_photon

    lo_a, hi_a = alpha_at(0.0), alpha_at(mu_hi * (1 - 1e-9))
    diag.update(alpha_low=lo_a, alpha_high=hi_a, mu_bg_max=mu_hi)
    if not lo_a <= target_alpha <= hi_a:
        raise CalibrationError("target_alpha not bracketed by the background search", diag)
    try:
        mu = brentq(lambda m: alpha_at(m) - target_alpha, 0.0, mu_hi * (1 - 1e-9), xtol=1e-18, rtol=1e-12, maxiter=200)
    except (RuntimeError, ValueError) as exc:  # pragma: no cover - brentq is bracketed
        raise CalibrationError(f"alpha search failed: {exc}", diag) from exc
    out = replace(base, p_emit=p_for(mu), mu_bg=mu)
    log.info("calibrated p_emit=%.6g mu_bg=%.6g", out.p_emit, out.mu_bg)
    return out


def expected_fringe_visibility(
    overlap: float,
    emitter: EmitterParams,
    detector: DetectorParams,
    timing: TimingParams,
    n_grid: int = 72,
) -> float:
    """Visibility a noiseless closed-configuration sweep shows after gated dark subtraction.

    Both detectors' expected counts are fitted jointly, like the analysis does.
    """
    from .analysis import fit_fringe_pair  # local: analysis imports nothing from here

    phases = np.linspace(0.0, np.pi, n_grid, endpoint=False)
    d1 = dark_probability(detector.dark_rate_d1, detector.gate_width)
    d2 = dark_probability(detector.dark_rate_d2, detector.gate_width)
    y1, y2 = [], []
    for phi in phases:
        p1 = 0.5 * (1 + overlap * math.cos(2 * phi))
        m = click_model(emitter, detector, timing, signal_routing=(p1, 1 - p1))
        y1.append(m.P1 - d1)
        y2.append(m.P2 - d2)
    return fit_fringe_pair(phases, np.array(y1), np.array(y2)).visibility


def calibrate_overlap(
    target_visibility: float,
    emitter: EmitterParams,
    detector: DetectorParams = DetectorParams(),
    timing: TimingParams = TimingParams(),
) -> float:
    """Mode-overlap factor that yields ``target_visibility`` after dark subtraction.

    Unpolarized background already dilutes the fringe, so the attainable
    visibility at perfect overlap can fall short of the target; in that case a
    ``CalibrationError`` carries the attainable maximum.
    """
    v_max = expected_fringe_visibility(1.0, emitter, detector, timing)
    if target_visibility > v_max:
        raise CalibrationError(
            "target visibility exceeds what perfect overlap gives with this background",
            {"max_visibility": v_max, "target": target_visibility},
        )
    return brentq(
        lambda m: expected_fringe_visibility(m, emitter, detector, timing) - target_visibility,
        0.0, 1.0, xtol=1e-12,
    )
