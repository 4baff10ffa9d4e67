"""Shot-noise quantum random number generator.

The amplified shot noise is a stationary Gaussian process sampled by a
zero-level comparator once per clock period. Its autocovariance is

    (1 - a) exp(-dt / corr_time) + a exp(-dt / osc_decay) cos(2 pi dt / osc_period)

where the second, optional term (``a = osc_amplitude``) models a small ringing
of the amplifier. Both terms are exactly simulable as first-order linear
recursions (a real one and a complex rotating one), so samples at arbitrary
time steps are drawn without discretization error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import curve_fit
from scipy.signal import lfilter

from . import rng as rngmod

__all__ = [
    "StatisticsError",
    "QrngParams",
    "NoiseState",
    "stationary_state",
    "sample_bit",
    "generate_noise",
    "generate_bits",
    "bits_for_range",
    "sparse_bits",
    "BitSequence",
    "autocorrelation",
    "bit_correlation",
    "count_variance_factor",
    "estimate_corr_time",
    "QRNG_CHUNK",
]

QRNG_CHUNK = 1 << 16


class StatisticsError(ValueError):
    pass


@dataclass(frozen=True)
class QrngParams:
    corr_time: float = 60.0  # ns
    sample_period: float = 238.0  # ns
    osc_amplitude: float = 0.0
    osc_period: float = 650.0  # ns
    osc_decay: float = 250.0  # ns

    def __post_init__(self):
        if not self.corr_time > 0:
            raise ValueError(f"corr_time must be positive, got {self.corr_time}")
        if not self.sample_period > 0:
            raise ValueError(f"sample_period must be positive, got {self.sample_period}")
        if not 0.0 <= self.osc_amplitude < 1.0:
            raise ValueError(f"osc_amplitude must lie in [0, 1), got {self.osc_amplitude}")
        if not (self.osc_period > 0 and self.osc_decay > 0):
            raise ValueError("osc_period and osc_decay must be positive")
        # chunked generation warms up over one chunk; memory must fade within it
        horizon = QRNG_CHUNK * self.sample_period / 80.0
        if max(self.corr_time, self.osc_decay) > horizon:
            raise ValueError(f"correlation times above {horizon:.0f} ns are not supported")

    def autocovariance(self, dt):
        dt = np.abs(np.asarray(dt, dtype=float))
        a = self.osc_amplitude
        out = (1 - a) * np.exp(-dt / self.corr_time)
        if a:
            out = out + a * np.exp(-dt / self.osc_decay) * np.cos(2 * np.pi * dt / self.osc_period)
        return out

    def _ou_coef(self, dt):
        return np.exp(-np.asarray(dt, dtype=float) / self.corr_time)

    def _osc_coef(self, dt):
        dt = np.asarray(dt, dtype=float)
        return np.exp(-dt / self.osc_decay) * np.exp(2j * np.pi * dt / self.osc_period)


@dataclass(frozen=True)
class NoiseState:
    ou: float
    osc: complex = 0j

    def value(self, params: QrngParams) -> float:
        a = params.osc_amplitude
        return math.sqrt(1 - a) * self.ou + math.sqrt(a) * self.osc.real


def stationary_state(params: QrngParams, rng: np.random.Generator) -> NoiseState:
    ou = float(rng.standard_normal())
    osc = complex(*rng.standard_normal(2)) if params.osc_amplitude else 0j
    return NoiseState(ou, osc)


def _comparator(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    bits = (x > 0).astype(np.uint8)
    ties = np.flatnonzero(x == 0)
    if ties.size:
        bits[ties] = rng.integers(0, 2, size=ties.size, dtype=np.uint8)
    return bits


def sample_bit(state: NoiseState, params: QrngParams, rng: np.random.Generator):
    """Advance the noise by one clock period and compare it to zero.

    Returns ``(bit, new_state)``. An exact zero (measure-zero) is resolved by
    a fresh fair coin.
    """
    rho = float(params._ou_coef(params.sample_period))
    ou = rho * state.ou + math.sqrt(1 - rho * rho) * float(rng.standard_normal())
    osc = 0j
    if params.osc_amplitude:
        lam = complex(params._osc_coef(params.sample_period))
        z = complex(*rng.standard_normal(2))
        osc = lam * state.osc + math.sqrt(1 - abs(lam) ** 2) * z
    new = NoiseState(ou, osc)
    x = new.value(params)
    if x == 0.0:
        return int(rng.integers(0, 2)), new
    return int(x > 0), new


def _filter(innov, coef, init):
    """y_n = coef * y_{n-1} + sqrt(1 - |coef|^2) * innov_n, starting from y_{-1} = init."""
    gain = math.sqrt(1 - abs(coef) ** 2)
    return lfilter([gain], [1.0, -coef], innov, zi=[coef * init])


def _innovations(params: QrngParams, rng: np.random.Generator, n: int):
    ou = rng.standard_normal(n)
    osc = None
    if params.osc_amplitude:
        z = rng.standard_normal((2, n))
        osc = z[0] + 1j * z[1]
    return ou, osc


def _combine(params, ou, osc):
    a = params.osc_amplitude
    if not a:
        return ou
    return math.sqrt(1 - a) * ou + math.sqrt(a) * osc.real


def generate_noise(
    n: int,
    spacing: float,
    params: QrngParams,
    rng: np.random.Generator,
    state: NoiseState | None = None,
):
    """``n`` noise samples ``spacing`` ns apart; returns ``(samples, final_state)``."""
    if state is None:
        state = stationary_state(params, rng)
    ou_in, osc_in = _innovations(params, rng, n)
    ou, zf = _filter(ou_in, float(params._ou_coef(spacing)), state.ou)
    osc = None
    last_osc = 0j
    if osc_in is not None:
        osc, _ = _filter(osc_in, complex(params._osc_coef(spacing)), state.osc)
        last_osc = complex(osc[-1])
    x = _combine(params, ou, osc)
    return x, NoiseState(float(ou[-1]), last_osc)


def generate_bits(n: int, params: QrngParams, rng: np.random.Generator, state: NoiseState | None = None):
    """``n`` comparator bits at the clock rate; returns ``(bits, final_state)``."""
    x, state = generate_noise(n, params.sample_period, params, rng, state)
    return _comparator(x, rng), state


def _chunk_innovations(seed, params, j):
    if j < 0:
        g = rngmod.stream(seed, "qrng-prelude")
    else:
        g = rngmod.stream(seed, "qrng", j)
    return _innovations(params, g, QRNG_CHUNK)


def bits_for_range(seed: int, start: int, stop: int, params: QrngParams) -> np.ndarray:
    """Comparator bits for triggers ``start .. stop-1`` of a keyed run.

    Trigger ``n`` belongs to chunk ``n // QRNG_CHUNK``. Each chunk's noise is
    obtained by running the recursion from rest through the previous chunk's
    innovations, so the result depends only on the seed and the trigger index,
    never on how the trigger range is split between calls or workers.
    """
    if stop <= start:
        return np.empty(0, dtype=np.uint8)
    rho = float(params._ou_coef(params.sample_period))
    lam = complex(params._osc_coef(params.sample_period))
    j0, j1 = start // QRNG_CHUNK, (stop - 1) // QRNG_CHUNK
    prev = _chunk_innovations(seed, params, j0 - 1)
    out = []
    for j in range(j0, j1 + 1):
        cur = _chunk_innovations(seed, params, j)
        ou_in = np.concatenate([prev[0], cur[0]])
        ou = _filter(ou_in, rho, 0.0)[0][QRNG_CHUNK:]
        osc = None
        if cur[1] is not None:
            osc = _filter(np.concatenate([prev[1], cur[1]]), lam, 0j)[0][QRNG_CHUNK:]
        x = _combine(params, ou, osc)
        bits = _comparator(x, rngmod.stream(seed, "qrng-tie", j))
        lo = max(start - j * QRNG_CHUNK, 0)
        hi = min(stop - j * QRNG_CHUNK, QRNG_CHUNK)
        out.append(bits[lo:hi])
        prev = cur
    return np.concatenate(out)


def sparse_bits(indices: np.ndarray, params: QrngParams, rng: np.random.Generator) -> np.ndarray:
    """Comparator bits at sorted trigger ``indices`` only.

    Samples the noise process at the requested triggers from its exact
    transition law over each gap, starting from the stationary law.
    """
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        return np.empty(0, dtype=np.uint8)
    gaps = np.diff(idx).astype(float) * params.sample_period
    coef = np.concatenate([[0.0], params._ou_coef(gaps)])
    ou = _linear_recurrence(coef, rng.standard_normal(idx.size))
    osc = None
    if params.osc_amplitude:
        lam = np.concatenate([[0.0], params._osc_coef(gaps)])
        z = rng.standard_normal((2, idx.size))
        osc = _linear_recurrence(lam, z[0] + 1j * z[1])
    return _comparator(_combine(params, ou, osc), rng)


def _linear_recurrence(coef: np.ndarray, innov: np.ndarray) -> np.ndarray:
    """Solve y_k = coef_k y_{k-1} + sqrt(1 - |coef_k|^2) innov_k with coef_0 = 0.

    Long gaps underflow ``coef`` to exactly zero and cut the chain, so a
    vectorized fixed-point sweep reaches the exact answer after as many passes
    as the longest run of short gaps.
    """
    base = np.sqrt(1.0 - np.abs(coef) ** 2) * innov
    y = base.copy()
    live = np.flatnonzero(coef != 0)
    for _ in range(coef.size):
        new = base[live] + coef[live] * y[live - 1]
        if np.array_equal(new, y[live]):
            break
        y[live] = new
    return y


def bit_correlation(params: QrngParams, lag: int) -> float:
    """Comparator-bit correlation at ``lag`` clock periods, (2/pi) arcsin(noise corr)."""
    rho = float(params.autocovariance(lag * params.sample_period))
    return 2.0 / math.pi * math.asin(max(-1.0, min(1.0, rho)))


def count_variance_factor(params: QrngParams, max_lag: int = 10_000) -> float:
    """Var(number of ones in n bits) / (n/4) for large n."""
    lags = np.arange(1, max_lag + 1)
    rho = np.clip(params.autocovariance(lags * params.sample_period), -1, 1)
    return 1.0 + 2.0 * float(np.sum(2.0 / np.pi * np.arcsin(rho)))


@dataclass(frozen=True)
class BitSequence:
    bits: np.ndarray
    sample_period: float = 238.0

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=np.uint8)
        if b.size == 0:
            raise StatisticsError("empty bit sequence")
        object.__setattr__(self, "bits", b)


def autocorrelation(seq: BitSequence | np.ndarray, max_lag: int) -> np.ndarray:
    """Normalized autocorrelation r(0..max_lag); r(k) averages over the N-k lagged pairs."""
    b = np.asarray(seq.bits if isinstance(seq, BitSequence) else seq, dtype=float)
    n = b.size
    if n <= max_lag:
        raise StatisticsError("sequence shorter than max_lag")
    x = b - b.mean()
    var = float(x @ x) / n
    if var == 0:
        raise StatisticsError("zero-variance sequence")
    r = np.empty(max_lag + 1)
    r[0] = 1.0
    for k in range(1, max_lag + 1):
        r[k] = float(x[:-k] @ x[k:]) / (n - k) / var
    return r


def estimate_corr_time(samples, spacing: float = 10.0) -> float:
    """Exponential decay constant (ns) of the empirical autocovariance."""
    x = np.asarray(samples, dtype=float)
    if x.size < 10_000:
        raise StatisticsError("need at least 1e4 samples")
    if not np.all(np.isfinite(x)) or np.ptp(x) == 0:
        raise StatisticsError("constant or non-finite samples")
    x = x - x.mean()
    var = float(x @ x) / x.size
    n = x.size
    max_lag = min(n // 10, 2000)
    acf = np.array([float(x[:-k] @ x[k:]) / (n - k) / var for k in range(1, max_lag + 1)])
    below = np.flatnonzero(acf < 0.05)
    stop = int(below[0]) if below.size else max_lag
    if stop < 2:
        raise StatisticsError("correlation shorter than the sampling step")
    lags = np.arange(1, stop + 1) * spacing
    try:
        (tau,), _ = curve_fit(lambda t, tau: np.exp(-t / tau), lags, acf[:stop], p0=[lags[stop // 2]])
    except RuntimeError as exc:
        raise StatisticsError(f"exponential fit failed: {exc}") from exc
    if not (np.isfinite(tau) and tau > 0):
        raise StatisticsError("exponential fit failed")
    return float(tau)
