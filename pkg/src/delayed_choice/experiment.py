"""Run orchestration: per-trigger configuration choice, emission, routing, detection.

The engine is event driven. Within a trigger every light source reduces to an
independent per-detector process: the signal photon (Bernoulli, routed by the
interferometer), background and classical light (Poisson, thinned per
detector), and dark counts. Triggers where any of them produces a detection
are rare (about one in 3000), so the engine draws the positions of such
triggers directly, using geometric gaps at each source's largest rate, and
then resolves configuration, routing and timing only there. This is exact: a
thinned Bernoulli or Poisson process has the same law as the dense one.

Triggers are split into fixed blocks of ``block_size``. Each block draws from
random streams keyed by ``(seed, block, purpose)``, so a run reproduces bit for
bit regardless of how many workers process the blocks.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial

import numpy as np

from . import qrng as qrngmod
from .analysis import Histogram
from .config import RunConfig
from .detection import dark_probability
from .eventlog import EventLog, LogError, LogWriter, PulseRecords, write_counters, write_histogram
from .photonics import EomState, InterferometerModel, detection_probabilities, incoherent_routing
from .rng import bernoulli_positions, stream
from .source import POISSONIAN, SINGLE_PHOTON, gate_acceptance, sample_delays

__all__ = ["RunError", "run", "sweep_phase", "hbt_run", "config_bits", "default_workers"]

log = logging.getLogger(__name__)

# photons later than this many lifetimes are never paired across blocks
_HBT_HORIZON_LIFETIMES = 60.0
_FORCED_CONFIG = {
    "forced_open": EomState.OPEN,
    "forced_closed": EomState.CLOSED,
    "blocked": EomState.OPEN,
    "classical_poissonian": EomState.OPEN,
    "hbt": EomState.OPEN,
}


class RunError(RuntimeError):
    pass


def default_workers() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


@dataclass(frozen=True)
class _Plan:
    cfg: RunConfig
    bounds: np.ndarray  # schedule point starts, plus n_triggers
    route: np.ndarray  # [segment, config, detector] signal routing probability
    lam: np.ndarray  # [segment, config, detector] Poisson detection intensity
    q_signal: float
    q_poisson: np.ndarray  # [detector] thinning envelope 1 - exp(-max lam)
    q_dark: np.ndarray
    limit: float | None  # truncation of sampled delays
    gate_check: bool  # per-photon gate test (timing jitter)
    hbt: bool
    var_factor: float

    @property
    def n_blocks(self) -> int:
        return -(-self.cfg.n_triggers // self.cfg.block_size)


def _make_plan(cfg: RunConfig) -> _Plan:
    em, det, tm = cfg.emitter, cfg.detector, cfg.timing
    hbt = cfg.mode == "hbt"
    phases = np.array([p for p, _ in cfg.phase_schedule])
    bounds = np.concatenate([[0], np.cumsum([n for _, n in cfg.phase_schedule])]).astype(np.int64)

    if hbt or not cfg.gate_truncation:
        g, limit, gate_check = 1.0, None, False
    elif tm.jitter > 0:
        g, limit, gate_check = 1.0, None, True
    else:
        g, limit, gate_check = gate_acceptance(em.tau_sp, tm.gate_width), tm.gate_width, False

    nseg = len(phases)
    route = np.zeros((nseg, 2, 2))
    bg = np.zeros((2, 2))
    for c in (EomState.OPEN, EomState.CLOSED):
        bg[c] = (0.5, 0.5) if hbt else incoherent_routing(c, cfg.blocked_path)
        for s, phi in enumerate(phases):
            if hbt:
                route[s, c] = (0.5, 0.5)
            else:
                model = InterferometerModel(phase=phi, overlap=cfg.overlap, length=tm.interferometer_length,
                                            blocked=cfg.blocked_path)
                route[s, c] = detection_probabilities(model, c)

    eta = det.efficiency
    lam = em.mu_bg * eta * g * np.broadcast_to(bg, route.shape)
    if em.mode == POISSONIAN:
        lam = lam + em.poisson_mean * eta * g * route
    q_signal = em.p_emit * eta * g if em.mode == SINGLE_PHOTON else 0.0
    window = tm.clock_period if hbt else tm.gate_width
    q_dark = np.array([dark_probability(det.dark_rate_d1, window), dark_probability(det.dark_rate_d2, window)])
    used = [c for c in (0, 1) if cfg.mode == "delayed_choice" or c == _FORCED_CONFIG[cfg.mode]]
    q_poisson = -np.expm1(-lam[:, used, :].reshape(-1, 2).max(axis=0))
    var_factor = qrngmod.count_variance_factor(cfg.qrng) if cfg.mode == "delayed_choice" else 1.0
    return _Plan(cfg, bounds, route, np.ascontiguousarray(lam), q_signal, q_poisson, q_dark,
                 limit, gate_check, hbt, var_factor)


@dataclass
class _BlockResult:
    n_triggers: np.ndarray  # [segment, config]
    hits: np.ndarray  # [segment, config, (N1, N2, NC)]
    records: PulseRecords | None
    hist: np.ndarray | None
    head: tuple | None  # HBT events near the block start: (detector, abs index, offset)
    tail: tuple | None


def _zero_truncated_poisson(rng: np.random.Generator, lam: np.ndarray) -> np.ndarray:
    """Poisson(lam) counts conditioned on being at least one (inverse CDF)."""
    lam = np.asarray(lam, dtype=float)
    u = rng.random(lam.size)
    k = np.ones(lam.size, dtype=np.int64)
    pk = lam / np.expm1(lam)  # P(K = 1 | K >= 1)
    cdf = pk.copy()
    active = u > cdf
    j = 1
    while active.any() and j < 10_000:
        j += 1
        pk = pk * lam / j
        cdf = cdf + pk
        k[active] = j
        active &= (u > cdf) & (pk > 0)
    return k


def _gate_ok(plan: _Plan, delays, owner_shift):
    if not plan.gate_check:
        return np.ones(delays.size, dtype=bool)
    gw = plan.cfg.timing.gate_width
    return (delays >= owner_shift) & (delays <= owner_shift + gw)


def _hbt_edges(cfg: RunConfig) -> np.ndarray:
    w = cfg.hbt_window_periods * cfg.timing.clock_period
    nb = max(1, int(round(2 * w / cfg.hbt_bin_ns)))
    return np.linspace(-w, w, nb + 1)


def _pair_differences(t1: np.ndarray, t2: np.ndarray, window: float) -> np.ndarray:
    """All t2 - t1 with |t2 - t1| <= window; both inputs sorted."""
    if t1.size == 0 or t2.size == 0:
        return np.empty(0)
    lo = np.searchsorted(t2, t1 - window, side="left")
    hi = np.searchsorted(t2, t1 + window, side="right")
    n = hi - lo
    if n.sum() == 0:
        return np.empty(0)
    owner = np.repeat(np.arange(t1.size), n)
    start = np.repeat(lo - np.concatenate([[0], np.cumsum(n)[:-1]]), n)
    j = start + np.arange(owner.size)
    return t2[j] - t1[owner]


def _segment_pieces(plan: _Plan, lo: int, hi: int):
    s0 = int(np.searchsorted(plan.bounds, lo, side="right")) - 1
    s1 = int(np.searchsorted(plan.bounds, hi - 1, side="right")) - 1
    return [(s, max(lo, int(plan.bounds[s])), min(hi, int(plan.bounds[s + 1]))) for s in range(s0, s1 + 1)]


def _simulate_block(plan: _Plan, b: int) -> _BlockResult:
    cfg = plan.cfg
    lo = b * cfg.block_size
    hi = min(lo + cfg.block_size, cfg.n_triggers)
    n = hi - lo
    nseg = len(cfg.phase_schedule)

    def S(tag):
        return stream(cfg.seed, b, tag)

    sig = bernoulli_positions(S("signal"), n, plan.q_signal)
    pois = [bernoulli_positions(S(f"poisson-{i}"), n, plan.q_poisson[i]) for i in (0, 1)]
    dark = [bernoulli_positions(S(f"dark-{i}"), n, plan.q_dark[i]) for i in (0, 1)]
    cand = np.unique(np.concatenate([sig, *pois, *dark]))
    seg = (np.searchsorted(plan.bounds, lo + cand, side="right") - 1).astype(np.int32)
    pieces = _segment_pieces(plan, lo, hi)

    # configuration bits at candidates and trigger counters per (segment, config)
    n_trig = np.zeros((nseg, 2), dtype=np.int64)
    if cfg.mode != "delayed_choice":
        c0 = int(_FORCED_CONFIG[cfg.mode])
        cbits = np.full(cand.size, c0, dtype=np.uint8)
        for s, a, e in pieces:
            n_trig[s, c0] += e - a
    elif not cfg.aggregate_qrng:
        bits = qrngmod.bits_for_range(cfg.seed, lo, hi, cfg.qrng)
        cbits = bits[cand]
        for s, a, e in pieces:
            ones = int(np.count_nonzero(bits[a - lo:e - lo]))
            n_trig[s] += (e - a - ones, ones)
    else:
        cbits = qrngmod.sparse_bits(lo + cand, cfg.qrng, S("qrng-sparse"))
        z = S("qrng-count").standard_normal(len(pieces))
        for (s, a, e), zk in zip(pieces, z):
            inside = (seg == s)
            m = int(np.count_nonzero(inside))
            ones_c = int(np.count_nonzero(cbits[inside]))
            n0 = e - a - m
            # non-candidate triggers: CLT for a correlated fair bit stream
            ones_n = int(np.clip(np.rint(0.5 * n0 + math.sqrt(0.25 * n0 * plan.var_factor) * zk), 0, n0))
            n_trig[s] += (e - a - ones_c - ones_n, ones_c + ones_n)

    nc = cand.size
    hit = np.zeros((2, nc), dtype=bool)
    first = np.full(nc, np.inf)  # earliest detected photon delay in the trigger
    t_hbt = np.full((2, nc), np.inf)  # earliest detection time per detector (HBT)
    shift = S("gate-jitter").normal(0.0, cfg.timing.jitter, nc) if plan.gate_check else np.zeros(nc)
    tau = cfg.emitter.tau_sp

    def record(k, det_idx, delays):
        hit[det_idx, k] = True
        np.minimum.at(first, k, delays)
        np.minimum.at(t_hbt[det_idx], k, delays)

    if sig.size:
        k = np.searchsorted(cand, sig)
        p = plan.route[seg[k], cbits[k]]
        u = S("signal-route").random(sig.size)
        d = sample_delays(S("signal-delay"), tau, plan.limit, sig.size)
        ok = _gate_ok(plan, d, shift[k])
        to1 = ok & (u < p[:, 0])
        to2 = ok & ~to1 & (u < p[:, 0] + p[:, 1])
        record(k[to1], 0, d[to1])
        record(k[to2], 1, d[to2])

    for i in (0, 1):
        pos = pois[i]
        if not pos.size:
            continue
        k = np.searchsorted(cand, pos)
        lam = plan.lam[seg[k], cbits[k], i]
        keep = S(f"poisson-{i}-thin").random(pos.size) * plan.q_poisson[i] < -np.expm1(-lam)
        k, lam = k[keep], lam[keep]
        if not k.size:
            continue
        counts = _zero_truncated_poisson(S(f"poisson-{i}-count"), lam)
        owner = np.repeat(k, counts)
        d = sample_delays(S(f"poisson-{i}-delay"), tau, plan.limit, owner.size)
        ok = _gate_ok(plan, d, shift[owner])
        record(owner[ok], i, d[ok])

    for i in (0, 1):
        if dark[i].size:
            k = np.searchsorted(cand, dark[i])
            hit[i, k] = True
            if plan.hbt:
                t = S(f"dark-{i}-time").random(k.size) * cfg.timing.clock_period
                np.minimum.at(t_hbt[i], k, t)

    any_hit = hit[0] | hit[1]
    rows = np.flatnonzero(any_hit)
    d1, d2 = hit[0, rows], hit[1, rows]
    key = seg[rows].astype(np.int64) * 2 + cbits[rows]
    hits = np.zeros((nseg, 2, 3), dtype=np.int64)
    for j, col in enumerate((d1, d2, d1 & d2)):
        hits[..., j] = np.bincount(key, weights=col, minlength=2 * nseg).reshape(nseg, 2)
    records = None
    if cfg.keep_log:
        delay = first[rows]
        delay[~np.isfinite(delay)] = np.nan
        records = PulseRecords(lo + cand[rows], seg[rows], cbits[rows], d1, d2, delay)

    hist = head = tail = None
    if plan.hbt:
        T = cfg.timing.clock_period
        edges = _hbt_edges(cfg)
        w = edges[-1]
        ev = []
        for i in (0, 1):
            kk = np.flatnonzero(np.isfinite(t_hbt[i]))
            rel = cand[kk] * T + t_hbt[i, kk]
            order = np.argsort(rel, kind="stable")
            ev.append((lo + cand[kk][order], t_hbt[i, kk][order], rel[order]))
        diffs = _pair_differences(ev[0][2], ev[1][2], w)
        hist = np.histogram(diffs, bins=edges)[0].astype(np.int64)
        horizon = w + _HBT_HORIZON_LIFETIMES * tau
        head = tuple((e[0][e[2] <= horizon], e[1][e[2] <= horizon]) for e in ev)
        tail = tuple((e[0][e[2] >= n * T - w], e[1][e[2] >= n * T - w]) for e in ev)
    return _BlockResult(n_trig, hits, records, hist, head, tail)


def _cross_pairs(tail, head, origin: int, T: float, edges: np.ndarray) -> np.ndarray:
    """Histogram of D1/D2 pairs with one event in each of two adjacent blocks."""
    out = np.zeros(edges.size - 1, dtype=np.int64)
    w = edges[-1]
    for a, c in ((tail[0], head[1]), (head[0], tail[1])):
        t1 = (a[0] - origin) * T + a[1]
        t2 = (c[0] - origin) * T + c[1]
        o1, o2 = np.argsort(t1, kind="stable"), np.argsort(t2, kind="stable")
        diffs = _pair_differences(t1[o1], t2[o2], w)
        out += np.histogram(diffs, bins=edges)[0]
    return out


def _iter_blocks(plan: _Plan, workers: int):
    func = partial(_simulate_block, plan)
    blocks = range(plan.n_blocks)
    if workers <= 1 or plan.n_blocks == 1:
        yield from map(func, blocks)
        return
    chunk = max(1, min(64, plan.n_blocks // (8 * workers)))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map() yields in submission order: this is the in-order sink
        yield from pool.map(func, blocks, chunksize=chunk)


def run(config: RunConfig, workers: int = 1, out_dir=None, progress=None) -> EventLog:
    """Simulate ``config`` and return its event log (also written to ``out_dir`` if given)."""
    plan = _make_plan(config)
    nseg = len(config.phase_schedule)
    phases = np.array([p for p, _ in config.phase_schedule])
    n_trig = np.zeros((nseg, 2), dtype=np.int64)
    hits = np.zeros((nseg, 2, 3), dtype=np.int64)
    parts: list[PulseRecords] = []
    hist = None
    if plan.hbt:
        edges = _hbt_edges(config)
        hist = np.zeros(edges.size - 1, dtype=np.int64)
    writer = LogWriter(out_dir, phases) if (out_dir is not None and config.keep_log) else None
    log.info("run mode=%s triggers=%d blocks=%d workers=%d", config.mode, config.n_triggers, plan.n_blocks, workers)
    try:
        if writer is not None:
            writer.__enter__()
        prev_tail = None
        for b, res in enumerate(_iter_blocks(plan, workers)):
            n_trig += res.n_triggers
            hits += res.hits
            if res.records is not None:
                if writer is not None:
                    writer.append(res.records)
                parts.append(res.records)
            if plan.hbt:
                hist += res.hist
                if prev_tail is not None:
                    hist += _cross_pairs(prev_tail, res.head, b * config.block_size,
                                         config.timing.clock_period, edges)
                prev_tail = res.tail
            if progress is not None:
                progress(b + 1, plan.n_blocks)
    except LogError as exc:
        if writer is not None:
            writer.__exit__(type(exc), exc, None)
        raise RunError(str(exc)) from exc
    except BaseException as exc:
        if writer is not None:
            writer.__exit__(type(exc), exc, None)
        raise
    if writer is not None:
        writer.__exit__(None, None, None)
    if int(n_trig.sum()) != config.n_triggers:  # pragma: no cover - internal invariant
        raise RunError("trigger counters do not add up to n_triggers")
    histogram = Histogram.from_edges(_hbt_edges(config), hist) if plan.hbt else None
    records = PulseRecords.concat(parts) if config.keep_log else None
    meta = {
        "seed": config.seed, "mode": config.mode, "n_triggers": config.n_triggers,
        "aggregate_qrng": config.mode == "delayed_choice" and config.aggregate_qrng,
        "gate_width_ns": config.timing.gate_width, "clock_period_ns": config.timing.clock_period,
    }
    result = EventLog(config.mode, phases, n_trig, hits, records, histogram, meta)
    if out_dir is not None:
        try:
            write_counters(out_dir, phases, n_trig)
            if histogram is not None:
                write_histogram(out_dir, histogram)
        except OSError as exc:
            raise RunError(f"writing outputs failed: {exc}") from exc
    return result


def sweep_phase(config: RunConfig, workers: int = 1, out_dir=None, progress=None) -> EventLog:
    if len(config.phase_schedule) < 2:
        raise RunError("a phase sweep needs at least 2 phase points")
    return run(config, workers=workers, out_dir=out_dir, progress=progress)


def hbt_run(config: RunConfig, workers: int = 1, out_dir=None, progress=None) -> Histogram:
    if config.mode != "hbt":
        raise RunError(f"hbt_run needs mode = hbt, got {config.mode}")
    return run(config, workers=workers, out_dir=out_dir, progress=progress).histogram


def config_bits(config: RunConfig, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Per-trigger configuration bits a delayed-choice run with exact QRNG counting uses."""
    if config.mode != "delayed_choice":
        return np.full((stop or config.n_triggers) - start, _FORCED_CONFIG[config.mode], dtype=np.uint8)
    if config.aggregate_qrng:
        raise RunError("aggregate QRNG counting draws bits only at hit triggers")
    stop = config.n_triggers if stop is None else stop
    return qrngmod.bits_for_range(config.seed, start, stop, config.qrng)
