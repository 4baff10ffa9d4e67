"""Post-run observables: anticorrelation, which-way information, fringes, g2."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares, minimize

__all__ = [
    "AnalysisError",
    "CountSummary",
    "AlphaResult",
    "alpha",
    "alpha_corrected",
    "which_way_info",
    "subtract_dark",
    "FringeFit",
    "fit_fringe",
    "fit_fringe_pair",
    "Histogram",
    "g2_zero",
    "G2Fit",
    "fit_g2",
]


class AnalysisError(ValueError):
    """Statistic undefined for the given data (zero counts, flat data, ...)."""


@dataclass(frozen=True)
class CountSummary:
    N_T: int
    N_1: int
    N_2: int
    N_C: int

    def __post_init__(self):
        if self.N_C > min(self.N_1, self.N_2) or max(self.N_1, self.N_2) > self.N_T:
            raise ValueError(f"inconsistent counts {self}")

    def __add__(self, other: "CountSummary") -> "CountSummary":
        return CountSummary(
            self.N_T + other.N_T, self.N_1 + other.N_1, self.N_2 + other.N_2, self.N_C + other.N_C
        )


@dataclass(frozen=True)
class AlphaResult:
    alpha: float
    sigma: float
    clamped: bool = False


def _poisson_sigma(f, counts: CountSummary) -> float:
    """Propagate independent Poisson errors on N_C, N_1, N_2 through ``f``."""
    base = np.array([counts.N_C, counts.N_1, counts.N_2], dtype=float)
    var = 0.0
    for i in range(3):
        h = max(1e-6 * base[i], 1e-3)
        up, dn = base.copy(), base.copy()
        up[i] += h
        dn[i] -= h
        deriv = (f(*up) - f(*dn)) / (2 * h)
        # an empty count still carries one count's worth of uncertainty
        var += deriv**2 * max(base[i], 1.0)
    return math.sqrt(var)


def alpha(counts: CountSummary) -> AlphaResult:
    """Classical-wave criterion N_C * N_T / (N_1 * N_2); classical light gives >= 1."""
    if counts.N_1 <= 0 or counts.N_2 <= 0:
        raise AnalysisError("alpha undefined with zero singles on a detector")
    nt = float(counts.N_T)

    def f(nc, n1, n2):
        return nc * nt / (n1 * n2)

    return AlphaResult(f(counts.N_C, counts.N_1, counts.N_2), _poisson_sigma(f, counts))


def alpha_corrected(counts: CountSummary, dark_p1: float, dark_p2: float) -> AlphaResult:
    """Alpha with the detectors' dark counts removed.

    Darks are independent of the light, so the per-gate no-click
    probabilities factor as (light) x (dark). Dividing out the known dark
    no-click probabilities leaves the photon-only singles and coincidence
    probabilities, whose ratio is the anticorrelation of the light itself.
    """
    if counts.N_1 <= 0 or counts.N_2 <= 0:
        raise AnalysisError("alpha undefined with zero singles on a detector")
    nt = float(counts.N_T)
    k1, k2 = 1.0 - dark_p1, 1.0 - dark_p2

    def f(nc, n1, n2):
        q1 = 1.0 - (1.0 - n1 / nt) / k1
        q2 = 1.0 - (1.0 - n2 / nt) / k2
        none12 = 1.0 - (n1 + n2 - nc) / nt
        q12 = q1 + q2 - 1.0 + none12 / (k1 * k2)
        return q12 / (q1 * q2)

    value = f(counts.N_C, counts.N_1, counts.N_2)
    if not math.isfinite(value):
        raise AnalysisError("dark-corrected singles vanish; alpha undefined")
    sigma = _poisson_sigma(f, counts)
    if value < 0:
        return AlphaResult(0.0, sigma, clamped=True)
    return AlphaResult(value, sigma)


def which_way_info(n1: float, n2: float) -> float:
    total = n1 + n2
    if total <= 0:
        raise AnalysisError("which-way information undefined without counts")
    return abs(n1 - n2) / total


def subtract_dark(
    counts, dark_rate: float, acquisition: float, gated: bool = False, duty: float = 1.0
):
    """Remove the expected dark counts from a count (or array of counts).

    ``acquisition`` is in seconds. Gated detection only sees darks during the
    gate, so the expectation scales by the gate duty cycle. Results floor at 0.
    """
    if not acquisition > 0:
        raise ValueError("acquisition time must be positive")
    expected = dark_rate * acquisition * (duty if gated else 1.0)
    out = np.maximum(np.asarray(counts, dtype=float) - expected, 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class FringeFit:
    visibility: float
    phase_offset: float
    mean_level: float
    rms_residual: float
    visibility_err: float = float("nan")
    clamped: bool = False
    minmax_visibility: float = float("nan")


def _check_fringe_points(phi: np.ndarray, n_series: int = 1):
    if phi.size < 4:
        raise AnalysisError("fringe fit needs at least 4 points")
    design = np.column_stack([np.ones_like(phi), np.cos(2 * phi), np.sin(2 * phi)])
    if np.linalg.matrix_rank(design) < 3:
        raise AnalysisError("fringe design is rank deficient (phases not distinct)")
    return design


def _minmax(y: np.ndarray) -> float:
    hi, lo = float(np.max(y)), float(np.min(y))
    return (hi - lo) / (hi + lo) if hi + lo > 0 else float("nan")


def fit_fringe(phases, counts) -> FringeFit:
    """Least-squares fit of ``A (1 + V cos(2 phi + phi0))``."""
    phi = np.asarray(phases, dtype=float)
    y = np.asarray(counts, dtype=float)
    design = _check_fringe_points(phi)
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    a, b, c = coef
    if a <= 0:
        raise AnalysisError("fitted mean level is not positive")
    amp = math.hypot(b, c)
    v_raw = amp / a
    resid = y - design @ coef
    dof = max(phi.size - 3, 1)
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.inv(design.T @ design)
    # dV = d(amp)/amp * ... : linearized on (a, b, c)
    grad = np.array([-v_raw / a, b / (amp * a) if amp else 0.0, c / (amp * a) if amp else 0.0])
    v_err = math.sqrt(max(float(grad @ cov @ grad), 0.0))
    return FringeFit(
        visibility=min(max(v_raw, 0.0), 1.0),
        phase_offset=math.atan2(-c, b),
        mean_level=float(a),
        rms_residual=math.sqrt(float(resid @ resid) / phi.size),
        visibility_err=v_err,
        clamped=v_raw > 1.0,
        minmax_visibility=_minmax(y),
    )


def fit_fringe_pair(phases, counts_d1, counts_d2) -> FringeFit:
    """Joint fit of complementary outputs sharing visibility and phase.

    D1 follows ``A1 (1 + V cos(2 phi + phi0))`` and D2 ``A2 (1 - V cos(...))``.
    ``mean_level`` reports A1 + A2.
    """
    phi = np.asarray(phases, dtype=float)
    y1 = np.asarray(counts_d1, dtype=float)
    y2 = np.asarray(counts_d2, dtype=float)
    _check_fringe_points(phi)
    f1, f2 = fit_fringe(phi, y1), fit_fringe(phi, y2)
    x0 = [f1.mean_level, f2.mean_level, 0.5 * (f1.visibility + f2.visibility), f1.phase_offset]
    scale = max(f1.mean_level, f2.mean_level, 1e-300)

    def resid(p):
        a1, a2, v, ph = p
        c = np.cos(2 * phi + ph)
        return np.concatenate([a1 * (1 + v * c) - y1, a2 * (1 - v * c) - y2]) / scale

    sol = least_squares(resid, x0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
    a1, a2, v, ph = sol.x
    if v < 0:
        v, ph = -v, ph + math.pi
    ph = math.atan2(math.sin(ph), math.cos(ph))
    r = sol.fun * scale
    n = r.size
    dof = max(n - 4, 1)
    s2 = float(r @ r) / dof
    J = sol.jac * scale
    try:
        cov = s2 * np.linalg.inv(J.T @ J)
        v_err = math.sqrt(max(cov[2, 2], 0.0))
    except np.linalg.LinAlgError:  # pragma: no cover - degenerate design
        v_err = float("nan")
    return FringeFit(
        visibility=min(v, 1.0),
        phase_offset=ph,
        mean_level=float(a1 + a2),
        rms_residual=math.sqrt(float(r @ r) / n),
        visibility_err=v_err,
        clamped=v > 1.0,
        minmax_visibility=0.5 * (_minmax(y1) + _minmax(y2)),
    )


@dataclass(frozen=True)
class Histogram:
    """Time-difference histogram; ``tau`` holds bin centres in ns."""

    tau: np.ndarray
    counts: np.ndarray

    @property
    def bin_width(self) -> float:
        return float(self.tau[1] - self.tau[0]) if self.tau.size > 1 else float("nan")

    @property
    def edges(self) -> np.ndarray:
        w = self.bin_width
        return np.append(self.tau - w / 2, self.tau[-1] + w / 2)

    @classmethod
    def from_edges(cls, edges, counts) -> "Histogram":
        edges = np.asarray(edges, dtype=float)
        return cls(0.5 * (edges[1:] + edges[:-1]), np.asarray(counts))


def _side_orders(hist: Histogram, clock_period: float) -> list[int]:
    lo, hi = hist.edges[0], hist.edges[-1]
    kmax = int(math.floor((max(-lo, hi) - clock_period / 2) / clock_period + 1e-9))
    orders = [
        n for n in range(-kmax, kmax + 1)
        if n != 0 and n * clock_period - clock_period / 2 >= lo - 1e-9
        and n * clock_period + clock_period / 2 <= hi + 1e-9
    ]
    if sum(n > 0 for n in orders) < 3 or sum(n < 0 for n in orders) < 3:
        raise AnalysisError("histogram must cover at least 3 side peaks per side")
    return orders


def g2_zero(hist: Histogram, clock_period: float) -> float:
    """Central-peak area over mean side-peak area, integrating each clock window."""
    orders = _side_orders(hist, clock_period)

    def area(n):
        sel = np.abs(hist.tau - n * clock_period) < clock_period / 2
        return float(np.sum(hist.counts[sel]))

    side = np.mean([area(n) for n in orders])
    if side <= 0:
        raise AnalysisError("side peaks are empty")
    return area(0) / side


@dataclass(frozen=True)
class G2Fit:
    g2_zero: float
    g2_err: float
    decay: float
    decay_err: float
    background: float  # flat counts per ns
    areas: dict


def _laplace_cdf(t, centre, scale):
    z = (t - centre) / scale
    return np.where(z < 0, 0.5 * np.exp(np.minimum(z, 0.0)), 1.0 - 0.5 * np.exp(-np.maximum(z, 0.0)))


def fit_g2(hist: Histogram, clock_period: float, decay_guess: float = 40.0) -> G2Fit:
    """Poisson maximum-likelihood fit of a train of two-sided exponential peaks.

    Each peak at ``n * clock_period`` has area ``A_n`` and the shape of the
    difference of two exponential emission delays; a flat term absorbs
    uncorrelated counts. Fitting the shapes avoids the bias that overlapping
    peak tails put on the windowed ratio of ``g2_zero``.
    """
    orders = _side_orders(hist, clock_period)
    edges = hist.edges
    y = np.asarray(hist.counts, dtype=float)
    width = np.diff(edges)
    lo, hi = edges[0], edges[-1]
    kmax = int(math.ceil(max(-lo, hi) / clock_period)) + 1
    all_orders = list(range(-kmax, kmax + 1))

    def shapes(decay):
        return np.stack(
            [
                _laplace_cdf(edges[1:], n * clock_period, decay) - _laplace_cdf(edges[:-1], n * clock_period, decay)
                for n in all_orders
            ],
            axis=1,
        )

    def window(n):
        return float(np.sum(y[np.abs(hist.tau - n * clock_period) < clock_period / 2]))

    bg0 = max(np.median(y) / np.mean(width), 1e-9) * 0.1
    a0 = [max(window(n), 1.0) for n in all_orders]
    x0 = np.log(np.array([decay_guess, bg0] + a0))

    def nll(logp):
        p = np.exp(logp)
        mu = p[1] * width + shapes(p[0]) @ p[2:]
        mu = np.maximum(mu, 1e-300)
        return float(np.sum(mu - y * np.log(mu)))

    res = minimize(nll, x0, method="L-BFGS-B")
    res = minimize(nll, res.x, method="Nelder-Mead", options={"maxiter": 20000, "xatol": 1e-10, "fatol": 1e-10}) if not res.success else res
    p = np.exp(res.x)
    decay, bg, areas = p[0], p[1], dict(zip(all_orders, p[2:]))
    side = np.array([areas[n] for n in orders])
    if side.mean() <= 0:
        raise AnalysisError("side peaks are empty")
    g2 = areas[0] / side.mean()

    # curvature of the NLL in log-parameters gives the covariance
    h = 1e-4
    k = res.x.size
    H = np.zeros((k, k))
    f0 = nll(res.x)
    for i in range(k):
        for j in range(i, k):
            ei, ej = np.eye(k)[i] * h, np.eye(k)[j] * h
            if i == j:
                H[i, i] = (nll(res.x + ei) - 2 * f0 + nll(res.x - ei)) / h**2
            else:
                H[i, j] = H[j, i] = (
                    nll(res.x + ei + ej) - nll(res.x + ei - ej) - nll(res.x - ei + ej) + nll(res.x - ei - ej)
                ) / (4 * h * h)
    try:
        cov = np.linalg.inv(H)
        decay_err = decay * math.sqrt(max(cov[0, 0], 0.0))
    except np.linalg.LinAlgError:  # pragma: no cover
        decay_err = float("nan")
    g2_err = g2 * math.sqrt(1.0 / max(areas[0], 1.0) + 1.0 / max(side.sum(), 1.0))
    return G2Fit(g2, g2_err, decay, decay_err, bg, areas)
