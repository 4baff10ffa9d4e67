"""Command-line entry point.

Exit codes: 0 success, 1 bad configuration, 2 runtime failure, 3 a ``--check``
threshold was missed.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import qrng as qrngmod
from .analysis import AnalysisError
from .config import ConfigError, RunConfig, format_config, load_config
from .eventlog import LogError, read_log, write_histogram
from .experiment import RunError, default_workers, run, sweep_phase
from .report import Check, analyze_log, format_summary, fringe_rows, run_checks
from .rng import stream
from .source import CalibrationError, calibrate, calibrate_overlap, expected_fringe_visibility, sample_delays
from .timeline import SpacetimeEvent, causality_audit, lightcone_entry

__all__ = ["main", "build_parser"]

log = logging.getLogger("delayed_choice")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3


class CheckFailed(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="delayed-choice", description="Delayed-choice single-photon experiment simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default="out"):
        sp.add_argument("--config", required=True, help="run configuration file")
        sp.add_argument("--out", default=out_default, help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="override the configured seed")
        sp.add_argument("--workers", type=int, default=None, help="worker processes (default: all cores)")
        sp.add_argument("-v", "--verbose", action="count", default=0)
        sp.add_argument("--check", action="store_true", help="exit 3 when an acceptance threshold is missed")
        return sp

    common(sub.add_parser("run", help="simulate the configured run and write the event log"))
    common(sub.add_parser("sweep", help="simulate a phase sweep and write the event log"))
    a = common(sub.add_parser("analyze", help="compute observables from an event log"))
    a.add_argument("--log", default=None, help="log directory (default: --out)")
    q = common(sub.add_parser("qrng-test", help="autocorrelation and correlation-time tests of the QRNG"))
    q.add_argument("--bits", type=int, default=420_000)
    q.add_argument("--max-lag", type=int, default=100)
    q.add_argument("--noise-samples", type=int, default=200_000)
    c = common(sub.add_parser("causality-check", help="space-like separation audit of the timing schedule"))
    c.add_argument("--pulses", type=int, default=1_000_000)
    k = common(sub.add_parser("calibrate", help="fit source parameters and mode overlap to target observables"))
    k.add_argument("--rate", type=float, default=700.0, help="target open-configuration rate per detector, 1/s")
    k.add_argument("--alpha", type=float, default=0.12, help="target anticorrelation parameter")
    k.add_argument("--visibility", type=float, default=0.94, help="target closed-configuration visibility")
    k.add_argument("--visibility-tol", type=float, default=0.02,
                   help="accept perfect overlap when the target is out of reach by at most this much")
    return p


def _emit_checks(checks: list[Check], enforce: bool):
    for ch in checks:
        print(ch.line())
    if enforce and any(ch.failed for ch in checks):
        raise CheckFailed(", ".join(ch.name for ch in checks if ch.failed))


def _write(path: Path, text: str):
    path.write_text(text, encoding="utf-8")


def _analyze(log_obj, cfg: RunConfig, out: Path, enforce: bool):
    rep = analyze_log(log_obj, cfg)
    summary = format_summary(rep, cfg)
    _write(out / "summary.txt", summary)
    with open(out / "fringe.csv", "w", encoding="utf-8") as fh:
        fh.write("phase_rad,config,d1_counts,d2_counts,d1_corrected,d2_corrected\n")
        for phi, c, n1, n2, y1, y2 in fringe_rows(log_obj, cfg):
            fh.write(f"{phi!r},{c},{n1},{n2},{y1:.3f},{y2:.3f}\n")
    if log_obj.histogram is not None:
        write_histogram(out, log_obj.histogram)
    sys.stdout.write(summary)
    _emit_checks(run_checks(rep, cfg), enforce)


def cmd_run(args, cfg: RunConfig, out: Path, sweep: bool):
    progress = None
    if args.verbose:
        def progress(done, total):
            if done == total or done % max(1, total // 20) == 0:
                log.info("block %d / %d", done, total)
    fn = sweep_phase if sweep else run
    result = fn(cfg, workers=args.workers, out_dir=out, progress=progress)
    _write(out / "config.cfg", format_config(cfg))
    _analyze(result, cfg, out, args.check)


def cmd_analyze(args, cfg: RunConfig, out: Path):
    src = Path(args.log) if args.log else out
    log_obj = read_log(src, mode=cfg.mode)
    _analyze(log_obj, cfg, out, args.check)


def cmd_qrng(args, cfg: RunConfig, out: Path):
    p = cfg.qrng
    g = stream(cfg.seed, "qrng-test")
    bits, _ = qrngmod.generate_bits(args.bits, p, g)
    r = qrngmod.autocorrelation(bits, args.max_lag)
    with open(out / "qrng_autocorr.csv", "w", encoding="utf-8") as fh:
        fh.write("lag,r\n")
        for k, v in enumerate(r):
            fh.write(f"{k},{v:.8f}\n")
    n = bits.size
    bound = 4.0 / math.sqrt(n)
    worst = float(np.max(np.abs(r[1:])))
    pred = qrngmod.bit_correlation(p, 1)
    sigma = 1.0 / math.sqrt(n)
    noise, _ = qrngmod.generate_noise(args.noise_samples, 10.0, p, stream(cfg.seed, "qrng-noise"))
    tau = qrngmod.estimate_corr_time(noise, 10.0)
    print(f"bits: {n}, mean {bits.mean():.5f}")
    print(f"max |r(k)|, k=1..{args.max_lag}: {worst:.5f} (bound 4/sqrt(N) = {bound:.5f})")
    print(f"r(1): {r[1]:.5f} (arcsin-law prediction {pred:.5f}, sigma {sigma:.5f})")
    print(f"estimated correlation time: {tau:.2f} ns (configured {p.corr_time} ns)")
    _emit_checks([
        Check("max |r(k)| k=1..%d" % args.max_lag, worst, f"< {bound:.5f}", worst < bound),
        Check("r(1) - arcsin prediction [sigma]", (r[1] - pred) / sigma, "within 3", abs(r[1] - pred) <= 3 * sigma),
        Check("correlation time [ns]", tau, "60 +/- 5", abs(tau - 60.0) <= 5.0),
    ], args.check)


def cmd_causality(args, cfg: RunConfig, out: Path):
    tm = cfg.timing
    g = stream(cfg.seed, "causality")
    delays = sample_delays(g, cfg.emitter.tau_sp, tm.gate_width, args.pulses)
    triggers = np.arange(args.pulses) * tm.clock_period
    rep = causality_audit(None, delays, tm, trigger_times=triggers)
    L = tm.interferometer_length
    entry = lightcone_entry(SpacetimeEvent(L, 0.0), SpacetimeEvent(0.0, 0.0), L)
    early = causality_audit(None, [0.0, 45.0], tm, trigger_times=[0.0, 0.0])
    with open(out / "causality_margins.csv", "w", encoding="utf-8") as fh:
        fh.write("pulse_index,emission_delay_ns,entry_margin_m,inflight_m,clearance_m\n")
        np.savetxt(fh, np.column_stack([np.arange(args.pulses), delays, rep.entry_margin, rep.inflight_distance,
                                        rep.clearance]), fmt=["%d", "%.6f", "%.6f", "%.6f", "%.6f"], delimiter=",")
    lines = [
        f"pulses audited: {rep.n_pulses}",
        f"{rep.n_violations} violations",
        f"minimum space-like margin of photon entry: {rep.entry_margin.min():.3f} m",
        f"in-flight distance at commutation start: {rep.inflight_distance.min():.2f} to "
        f"{rep.inflight_distance.max():.2f} m",
        f"minimum cone clearance at commutation start: {rep.clearance.min():.2f} m",
        f"in-flight distance for delay 0 / 45 ns: {early.inflight_distance[0]:.2f} / {early.inflight_distance[1]:.2f} m",
        "light-cone entry of a delay-0 photon: "
        + (f"x = {entry[0]:.2f} m at t = {entry[1]:.2f} ns" if entry else "not entered"),
    ]
    for v in rep.violations[:20]:
        lines.append(f"violation at pulse {v[0]}: {v[1]}")
    text = "\n".join(lines) + "\n"
    _write(out / "causality.txt", text)
    sys.stdout.write(text)
    d0, d45 = early.inflight_distance
    _emit_checks([
        Check("violations", rep.n_violations, "0", rep.n_violations == 0),
        Check("in-flight distance, delay 0 [m]", d0, "24 to 25.5", 24.0 <= d0 <= 25.5),
        Check("in-flight distance, delay 45 ns [m]", d45, "12 +/- 0.5", 11.5 <= d45 <= 12.5),
        Check("light-cone entry [m]", entry[0] if entry else float("nan"), "24 +/- 0.5",
              entry is not None and abs(entry[0] - 24.0) <= 0.5),
    ], args.check)


def cmd_calibrate(args, cfg: RunConfig, out: Path):
    try:
        em = calibrate(args.rate, args.alpha, cfg.timing, cfg.detector, cfg.emitter.tau_sp)
    except CalibrationError as exc:
        raise RunError(f"calibration failed: {exc} {exc.diagnostics}") from exc
    try:
        overlap = calibrate_overlap(args.visibility, em, cfg.detector, cfg.timing)
        note = ""
    except CalibrationError as exc:
        vmax = exc.diagnostics["max_visibility"]
        if args.visibility - vmax > args.visibility_tol:
            raise RunError(f"visibility {args.visibility} unattainable: maximum {vmax:.4f}") from exc
        overlap = 1.0
        note = f" (target out of reach; perfect overlap gives {vmax:.4f})"
    v = expected_fringe_visibility(overlap, em, cfg.detector, cfg.timing)
    new = replace(cfg, emitter=em, overlap=overlap)
    _write(out / "calibrated.cfg", format_config(new))
    print(f"p_emit: {em.p_emit:.6g}")
    print(f"mu_bg: {em.mu_bg:.6g}")
    print(f"overlap: {overlap:.6g}{note}")
    print(f"expected visibility: {v:.4f}")
    _emit_checks([Check("expected visibility", v, "0.94 +/- 0.02", abs(v - 0.94) <= 0.02)], args.check)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.workers is None:
        args.workers = default_workers()
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if args.command in ("run", "sweep"):
            cmd_run(args, cfg, out, sweep=args.command == "sweep")
        elif args.command == "analyze":
            cmd_analyze(args, cfg, out)
        elif args.command == "qrng-test":
            cmd_qrng(args, cfg, out)
        elif args.command == "causality-check":
            cmd_causality(args, cfg, out)
        elif args.command == "calibrate":
            cmd_calibrate(args, cfg, out)
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (RunError, LogError, AnalysisError, CalibrationError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
