"""Run configuration and its line-based text format.

A config file holds ``[section]`` headers followed by ``key = value`` lines;
``#`` and ``;`` start comments. Sections and keys, with their defaults:

    [experiment]
    mode = delayed_choice       # delayed_choice | forced_open | forced_closed |
                                # blocked | hbt | classical_poissonian
    seed = 0
    n_triggers = 1000000        # single-point runs (ignored when [sweep] is present)
    phase = 0.0                 # radians, single-point runs
    blocked_path = none         # 1 | 2 | none; "blocked" mode defaults to 2
    block_size = 1048576        # triggers per random-stream block
    qrng_counting = auto        # exact | aggregate | auto
    gate_truncation = true      # photons later than the gate are lost
    keep_log = true             # write the per-hit event log
    hbt_bin_ns = 2.0

    [sweep]
    points = 20
    triggers_per_point = 8000000
    phase_start = 0.0
    phase_stop = 6.283185307179586   # exclusive
    phases =                     # optional explicit comma-separated list

    [photonics]   overlap = 1.0, length = 48.0
    [source]      tau_sp, p_emit, mu_bg, emitter_mode, poisson_mean
    [detection]   efficiency, dark_rate_d1, dark_rate_d2
    [timing]      clock_period, flight_time, gate_width, eom_commute_start,
                  eom_commute_width, interferometer_length, jitter
    [qrng]        corr_time, sample_period, osc_amplitude, osc_period, osc_decay

The detector gate width always equals ``[timing] gate_width``.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

from .detection import DetectorParams
from .qrng import QrngParams
from .source import POISSONIAN, EmitterParams
from .timeline import ScheduleError, TimingParams

__all__ = ["ConfigError", "RunConfig", "MODES", "load_config", "parse_config", "format_config"]

MODES = ("delayed_choice", "forced_open", "forced_closed", "blocked", "hbt", "classical_poissonian")
QRNG_COUNTING = ("exact", "aggregate", "auto")
AUTO_AGGREGATE_ABOVE = 1 << 31


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    mode: str = "delayed_choice"
    phase_schedule: tuple[tuple[float, int], ...] = ((0.0, 1_000_000),)
    seed: int = 0
    overlap: float = 1.0
    blocked_path: int | None = None
    emitter: EmitterParams = field(default_factory=EmitterParams)
    detector: DetectorParams = field(default_factory=DetectorParams)
    timing: TimingParams = field(default_factory=TimingParams)
    qrng: QrngParams = field(default_factory=QrngParams)
    block_size: int = 1 << 20
    qrng_counting: str = "auto"
    gate_truncation: bool = True
    keep_log: bool = True
    hbt_bin_ns: float = 2.0
    hbt_window_periods: int = 5

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")
        sched = tuple((float(p), int(n)) for p, n in self.phase_schedule)
        object.__setattr__(self, "phase_schedule", sched)
        if not sched:
            raise ConfigError("phase schedule is empty")
        for p, n in sched:
            if n <= 0:
                raise ConfigError(f"every phase point needs n_triggers > 0, got {n}")
            if not math.isfinite(p):
                raise ConfigError("phase setpoints must be finite")
        if self.mode == "blocked" and self.blocked_path is None:
            object.__setattr__(self, "blocked_path", 2)
        if self.blocked_path not in (None, 1, 2):
            raise ConfigError(f"blocked_path must be 1, 2 or none, got {self.blocked_path!r}")
        if self.mode == "hbt" and self.blocked_path is not None:
            raise ConfigError("hbt mode has no interferometer to block")
        if self.mode == "classical_poissonian" and self.emitter.mode != POISSONIAN:
            raise ConfigError("classical_poissonian mode needs emitter_mode = poissonian")
        if not 0.0 <= self.overlap <= 1.0:
            raise ConfigError(f"overlap must lie in [0, 1], got {self.overlap}")
        if self.block_size < 1024:
            raise ConfigError("block_size must be at least 1024")
        if self.qrng_counting not in QRNG_COUNTING:
            raise ConfigError(f"qrng_counting must be one of {', '.join(QRNG_COUNTING)}")
        if not self.hbt_bin_ns > 0:
            raise ConfigError("hbt_bin_ns must be positive")
        if self.detector.gate_width != self.timing.gate_width:
            object.__setattr__(self, "detector", replace(self.detector, gate_width=self.timing.gate_width))
        try:
            self.timing.validate()
        except ScheduleError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def n_triggers(self) -> int:
        return sum(n for _, n in self.phase_schedule)

    @property
    def aggregate_qrng(self) -> bool:
        if self.qrng_counting == "auto":
            return self.n_triggers > AUTO_AGGREGATE_ABOVE
        return self.qrng_counting == "aggregate"


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int(text: str) -> int:
    # accept 8e6-style literals when they denote an integer
    t = text.strip().replace("_", "")
    try:
        return int(t)
    except ValueError:
        v = float(t)
        if not v.is_integer():
            raise ValueError(f"not an integer: {text!r}") from None
        return int(v)


def _opt_path(text: str):
    t = text.strip().lower()
    return None if t in ("", "none") else _int(t)


def _floats(text: str):
    return tuple(float(x) for x in text.replace(",", " ").split())


_EXPERIMENT = {
    "mode": str, "seed": _int, "n_triggers": _int, "phase": float, "blocked_path": _opt_path,
    "block_size": _int, "qrng_counting": str, "gate_truncation": _bool, "keep_log": _bool,
    "hbt_bin_ns": float,
}
_SWEEP = {"points": _int, "triggers_per_point": _int, "phase_start": float, "phase_stop": float, "phases": _floats}
_PHOTONICS = {"overlap": float, "length": float}
_SOURCE = {"tau_sp": float, "p_emit": float, "mu_bg": float, "emitter_mode": str, "poisson_mean": float}
_DETECTION = {"efficiency": float, "dark_rate_d1": float, "dark_rate_d2": float}
_TIMING = {f.name: float for f in dataclasses.fields(TimingParams)}
_QRNG = {f.name: float for f in dataclasses.fields(QrngParams)}
SCHEMA = {
    "experiment": _EXPERIMENT, "sweep": _SWEEP, "photonics": _PHOTONICS, "source": _SOURCE,
    "detection": _DETECTION, "timing": _TIMING, "qrng": _QRNG,
}

_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^\s*([^=:#;\s][^=:]*?)\s*[=:]")


def _line_numbers(text: str) -> dict[tuple[str, str], int]:
    lines: dict[tuple[str, str], int] = {}
    section = None
    for no, line in enumerate(text.splitlines(), start=1):
        m = _SECTION_RE.match(line)
        if m:
            section = m.group(1).strip()
            lines[(section, "")] = no
            continue
        m = _KEY_RE.match(line)
        if m and section is not None and not line[:1].isspace():
            lines[(section, m.group(1).strip().lower())] = no
    return lines


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    lines = _line_numbers(text)

    def where(section, key=""):
        no = lines.get((section, key)) or lines.get((section, ""))
        return f"{source}:{no}" if no else source

    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc

    values: dict[str, dict] = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{where(section)}: unknown section [{section}]")
        values[section] = {}
        for key, raw in cp.items(section):
            conv = SCHEMA[section].get(key)
            if conv is None:
                raise ConfigError(f"{where(section, key)}: unknown key '{key}' in [{section}]")
            try:
                values[section][key] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"{where(section, key)}: bad value for '{key}': {exc}") from exc

    def block(section, cls, rename=None, extra=None):
        kw = dict(values.get(section, {}))
        for a, b in (rename or {}).items():
            if a in kw:
                kw[b] = kw.pop(a)
        kw.update(extra or {})
        try:
            return cls(**kw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{where(section)}: [{section}] {exc}") from exc

    exp = values.get("experiment", {})
    timing = block("timing", TimingParams)
    source_kw = values.get("source", {})
    src_extra = {}
    if exp.get("mode") == "classical_poissonian" and "emitter_mode" not in source_kw:
        src_extra["mode"] = POISSONIAN
    emitter = block("source", EmitterParams, rename={"emitter_mode": "mode"}, extra=src_extra)
    detector = block("detection", DetectorParams, extra={"gate_width": timing.gate_width})
    qrng = block("qrng", QrngParams)
    phot = values.get("photonics", {})
    if "length" in phot and abs(phot["length"] - timing.interferometer_length) > 1e-9:
        raise ConfigError(f"{where('photonics', 'length')}: length must match [timing] interferometer_length")

    if "sweep" in values:
        sw = values["sweep"]
        if "phases" in sw:
            phases = sw["phases"]
        else:
            k = sw.get("points", 20)
            if k < 1:
                raise ConfigError(f"{where('sweep', 'points')}: points must be >= 1")
            a, b = sw.get("phase_start", 0.0), sw.get("phase_stop", 2 * math.pi)
            phases = tuple(a + (b - a) * i / k for i in range(k))
        per = sw.get("triggers_per_point", 8_000_000)
        schedule = tuple((p, per) for p in phases)
    else:
        schedule = ((exp.get("phase", 0.0), exp.get("n_triggers", 1_000_000)),)

    kw = {k: v for k, v in exp.items() if k not in ("n_triggers", "phase")}
    try:
        return RunConfig(
            phase_schedule=schedule, overlap=phot.get("overlap", 1.0), emitter=emitter,
            detector=detector, timing=timing, qrng=qrng, **kw,
        )
    except ConfigError as exc:
        raise ConfigError(f"{where('experiment')}: {exc}") from exc


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    return parse_config(text, source=str(p))


def format_config(cfg: RunConfig) -> str:
    """Render ``cfg`` in the file format (round-trips through ``parse_config``)."""
    out = ["[experiment]"]
    out += [
        f"mode = {cfg.mode}", f"seed = {cfg.seed}",
        f"blocked_path = {cfg.blocked_path if cfg.blocked_path is not None else 'none'}",
        f"block_size = {cfg.block_size}", f"qrng_counting = {cfg.qrng_counting}",
        f"gate_truncation = {str(cfg.gate_truncation).lower()}",
        f"keep_log = {str(cfg.keep_log).lower()}", f"hbt_bin_ns = {cfg.hbt_bin_ns!r}",
    ]
    if len(cfg.phase_schedule) == 1:
        (phase, n), = cfg.phase_schedule
        out += [f"n_triggers = {n}", f"phase = {phase!r}"]
    else:
        counts = {n for _, n in cfg.phase_schedule}
        if len(counts) != 1:
            raise ConfigError("the file format needs equal triggers per sweep point")
        out += ["", "[sweep]", f"triggers_per_point = {counts.pop()}",
                "phases = " + ", ".join(repr(p) for p, _ in cfg.phase_schedule)]
    out += ["", "[photonics]", f"overlap = {cfg.overlap!r}"]
    e = cfg.emitter
    out += ["", "[source]", f"tau_sp = {e.tau_sp!r}", f"p_emit = {e.p_emit!r}", f"mu_bg = {e.mu_bg!r}",
            f"emitter_mode = {e.mode}", f"poisson_mean = {e.poisson_mean!r}"]
    d = cfg.detector
    out += ["", "[detection]", f"efficiency = {d.efficiency!r}", f"dark_rate_d1 = {d.dark_rate_d1!r}",
            f"dark_rate_d2 = {d.dark_rate_d2!r}"]
    out += ["", "[timing]"] + [f"{f.name} = {getattr(cfg.timing, f.name)!r}" for f in dataclasses.fields(TimingParams)]
    out += ["", "[qrng]"] + [f"{f.name} = {getattr(cfg.qrng, f.name)!r}" for f in dataclasses.fields(QrngParams)]
    return "\n".join(out) + "\n"
