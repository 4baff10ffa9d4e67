"""Observables of a finished run and the threshold checks applied to them."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import analysis as an
from .config import RunConfig
from .detection import dark_probability
from .eventlog import EventLog

__all__ = ["Check", "RunReport", "analyze_log", "run_checks", "format_summary", "fringe_rows"]

CONFIG_NAMES = {0: "open", 1: "closed"}


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    target: str
    passed: bool | None  # None: statistics too poor to judge

    def line(self) -> str:
        tag = {True: "PASS", False: "FAIL", None: "SKIP"}[self.passed]
        return f"{tag} {self.name}: {self.value:.6g} (target {self.target})"

    @property
    def failed(self) -> bool:
        return self.passed is False


@dataclass
class RunReport:
    mode: str
    summaries: dict  # config bit -> CountSummary over all points
    alpha_raw: dict = field(default_factory=dict)
    alpha: dict = field(default_factory=dict)  # dark-corrected
    rates: dict = field(default_factory=dict)  # config -> (D1, D2) raw counts per second
    which_way: dict = field(default_factory=dict)  # config -> I from dark-subtracted counts
    fringe: dict = field(default_factory=dict)  # config -> FringeFit
    proportions: dict = field(default_factory=dict)  # config -> per-point D1 proportion
    detections_per_point: dict = field(default_factory=dict)  # config -> per-point N1 + N2
    g2: an.G2Fit | None = None
    g2_window: float | None = None


def _acquisition_s(n_triggers, cfg: RunConfig):
    return np.asarray(n_triggers, dtype=float) * cfg.timing.clock_period * 1e-9


def fringe_rows(log: EventLog, cfg: RunConfig):
    """Per (point, config) raw and gated-dark-subtracted counts."""
    duty = cfg.timing.gate_width / cfg.timing.clock_period
    rows = []
    for s, phi in enumerate(log.phases):
        for c in (0, 1):
            nt = int(log.n_triggers[s, c])
            if nt == 0:
                continue
            n1, n2 = int(log.hits[s, c, 0]), int(log.hits[s, c, 1])
            t = float(_acquisition_s(nt, cfg))
            rows.append((
                float(phi), c, n1, n2,
                an.subtract_dark(n1, cfg.detector.dark_rate_d1, t, gated=True, duty=duty),
                an.subtract_dark(n2, cfg.detector.dark_rate_d2, t, gated=True, duty=duty),
            ))
    return rows


def analyze_log(log: EventLog, cfg: RunConfig) -> RunReport:
    rep = RunReport(log.mode, {})
    if cfg.mode == "hbt":
        window = cfg.timing.clock_period
    else:
        window = cfg.timing.gate_width
    d1 = dark_probability(cfg.detector.dark_rate_d1, window)
    d2 = dark_probability(cfg.detector.dark_rate_d2, window)
    rows = fringe_rows(log, cfg)
    for c in (0, 1):
        s = log.summary(config=c)
        if s.N_T == 0:
            continue
        rep.summaries[c] = s
        t = float(_acquisition_s(s.N_T, cfg))
        rep.rates[c] = (s.N_1 / t, s.N_2 / t)
        if s.N_1 > 0 and s.N_2 > 0:
            rep.alpha_raw[c] = an.alpha(s)
            try:
                rep.alpha[c] = an.alpha_corrected(s, d1, d2)
            except an.AnalysisError:
                pass
        c1 = max(s.N_1 - s.N_T * d1, 0.0)
        c2 = max(s.N_2 - s.N_T * d2, 0.0)
        if c1 + c2 > 0:
            rep.which_way[c] = an.which_way_info(c1, c2)
        pts = [r for r in rows if r[1] == c]
        rep.detections_per_point[c] = np.array([r[2] + r[3] for r in pts])
        y1 = np.array([r[4] for r in pts])
        y2 = np.array([r[5] for r in pts])
        tot = y1 + y2
        rep.proportions[c] = np.divide(y1, tot, out=np.full_like(tot, np.nan), where=tot > 0)
        if len(pts) >= 4:
            phases = np.array([r[0] for r in pts])
            try:
                rep.fringe[c] = an.fit_fringe_pair(phases, y1, y2)
            except an.AnalysisError:
                pass
    if log.histogram is not None and log.histogram.counts.sum() > 0:
        try:
            rep.g2 = an.fit_g2(log.histogram, cfg.timing.clock_period, decay_guess=cfg.emitter.tau_sp)
            rep.g2_window = an.g2_zero(log.histogram, cfg.timing.clock_period)
        except an.AnalysisError:
            pass
    return rep


def run_checks(rep: RunReport, cfg: RunConfig) -> list[Check]:
    """Acceptance thresholds that apply to the observables this run produced."""
    out: list[Check] = []
    if cfg.mode == "hbt":
        if rep.g2 is not None:
            out.append(Check("g2(0)", rep.g2.g2_zero, "0.12 +/- 0.02", abs(rep.g2.g2_zero - 0.12) <= 0.02))
            out.append(Check("g2 decay [ns]", rep.g2.decay, "44.5 +/- 1.5", abs(rep.g2.decay - 44.5) <= 1.5))
        else:
            out.append(Check("g2(0)", float("nan"), "histogram with side peaks", False))
        return out
    if cfg.mode == "classical_poissonian":
        # darks are classical too, so the inequality applies to raw counts
        a = rep.alpha_raw.get(0)
        ok = a is not None and a.alpha >= 1 - 3 * a.sigma
        out.append(Check("alpha (classical)", a.alpha if a else float("nan"), ">= 1 - 3 sigma", ok))
        return out
    blocked = cfg.blocked_path is not None
    if 0 in rep.summaries:
        if blocked:
            i = rep.which_way.get(0, float("nan"))
            out.append(Check("which-way I [open]", i, "> 0.99", i > 0.99))
        else:
            r1, r2 = rep.rates[0]
            mean_rate = 0.5 * (r1 + r2)
            out.append(Check("rate per detector [open, 1/s]", mean_rate, "700 +/- 35", abs(mean_rate - 700) <= 35))
            a = rep.alpha.get(0)
            if a is not None:
                # a standard error above the tolerance cannot decide the threshold
                ok = abs(a.alpha - 0.12) <= 0.01 if a.sigma <= 0.01 else None
                target = "0.12 +/- 0.01" if ok is not None else f"0.12 +/- 0.01; sigma {a.sigma:.3g} too large"
                out.append(Check("alpha [open]", a.alpha, target, ok))
            props = rep.proportions.get(0)
            if props is not None and len(props) >= 2:
                worst = float(np.nanmax(np.abs(props - 0.5)))
                out.append(Check("max |D1 proportion - 0.5| [open]", worst, "<= 0.01 at every point", worst <= 0.01))
    if 1 in rep.fringe and not blocked:
        v = rep.fringe[1].visibility
        out.append(Check("visibility [closed]", v, "0.94 +/- 0.02", abs(v - 0.94) <= 0.02))
    return out


def format_summary(rep: RunReport, cfg: RunConfig) -> str:
    lines = [f"mode: {cfg.mode}", f"seed: {cfg.seed}", f"triggers: {cfg.n_triggers}"]
    for c, s in rep.summaries.items():
        name = CONFIG_NAMES[c]
        lines.append(f"counts [{name}]: N_T={s.N_T} N_1={s.N_1} N_2={s.N_2} N_C={s.N_C}")
        r1, r2 = rep.rates[c]
        lines.append(f"rate [{name}]: D1={r1:.2f}/s D2={r2:.2f}/s")
        if c in rep.alpha:
            a, ar = rep.alpha[c], rep.alpha_raw[c]
            lines.append(f"alpha [{name}]: {a.alpha:.4f} +/- {a.sigma:.4f} (darks removed; raw {ar.alpha:.4f} +/- {ar.sigma:.4f})")
        if c in rep.which_way:
            lines.append(f"which-way I [{name}]: {rep.which_way[c]:.4f}")
        if c in rep.fringe:
            f = rep.fringe[c]
            lines.append(
                f"visibility [{name}]: {f.visibility:.4f} +/- {f.visibility_err:.4f} "
                f"(max-min {f.minmax_visibility:.4f}, phase offset {f.phase_offset:.3f} rad)"
            )
        props = rep.proportions.get(c)
        if props is not None and len(props) > 1:
            lines.append(
                f"D1 proportion [{name}]: mean {np.nanmean(props):.4f}, "
                f"range [{np.nanmin(props):.4f}, {np.nanmax(props):.4f}] over {len(props)} points"
            )
        det = rep.detections_per_point.get(c)
        if det is not None and len(det):
            lines.append(f"detections per point [{name}]: mean {det.mean():.1f}")
    if rep.g2 is not None:
        g = rep.g2
        lines.append(f"g2(0): {g.g2_zero:.4f} +/- {g.g2_err:.4f} (window ratio {rep.g2_window:.4f})")
        lines.append(f"g2 decay: {g.decay:.2f} +/- {g.decay_err:.2f} ns")
    return "\n".join(lines) + "\n"

