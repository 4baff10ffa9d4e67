"""Event logs: hit-bearing trigger records plus per-(phase, config) trigger counters.

On disk a log directory holds

* ``events.csv``   ``pulse_index,phase_setpoint_rad,config_bit,d1,d2,emission_delay_ns``
  (one row per trigger with at least one detector hit; the delay is the
  simulation-truth emission delay of the earliest detected photon and is
  empty when only dark counts fired),
* ``counters.csv`` ``phase_setpoint_rad,config_bit,n_triggers``,
* ``histogram.csv`` ``tau_ns,counts`` for HBT runs.

An aborted write leaves ``events.csv.part`` and a ``PARTIAL`` marker file.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analysis import CountSummary, Histogram

__all__ = [
    "EVENTS_HEADER",
    "COUNTERS_HEADER",
    "HISTOGRAM_HEADER",
    "LogError",
    "PulseRecords",
    "EventLog",
    "LogWriter",
    "read_log",
    "write_histogram",
    "read_histogram",
]

EVENTS_HEADER = ["pulse_index", "phase_setpoint_rad", "config_bit", "d1", "d2", "emission_delay_ns"]
COUNTERS_HEADER = ["phase_setpoint_rad", "config_bit", "n_triggers"]
HISTOGRAM_HEADER = ["tau_ns", "counts"]
PARTIAL_MARKER = "PARTIAL"


class LogError(RuntimeError):
    pass


@dataclass
class PulseRecords:
    """Columnar hit records. ``segment`` indexes the phase schedule."""

    pulse_index: np.ndarray
    segment: np.ndarray
    config_bit: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    emission_delay: np.ndarray  # NaN for dark-only triggers

    @classmethod
    def empty(cls) -> "PulseRecords":
        return cls(
            np.empty(0, np.int64), np.empty(0, np.int32), np.empty(0, np.uint8),
            np.empty(0, bool), np.empty(0, bool), np.empty(0, float),
        )

    @classmethod
    def concat(cls, parts) -> "PulseRecords":
        parts = list(parts)
        if not parts:
            return cls.empty()
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in cls.__dataclass_fields__))

    def __len__(self) -> int:
        return int(self.pulse_index.size)

    def select(self, mask) -> "PulseRecords":
        return PulseRecords(*(getattr(self, f)[mask] for f in self.__dataclass_fields__))


@dataclass
class EventLog:
    """Result of a run.

    ``n_triggers[s, c]`` counts triggers of schedule point ``s`` with
    configuration bit ``c``; ``hits[s, c]`` holds (N_1, N_2, N_C) for them.
    ``records`` is None when the run did not keep per-hit rows.
    """

    mode: str
    phases: np.ndarray
    n_triggers: np.ndarray
    hits: np.ndarray
    records: PulseRecords | None = None
    histogram: Histogram | None = None
    meta: dict = field(default_factory=dict)

    def summary(self, config: int | None = None, segment: int | None = None) -> CountSummary:
        s = slice(None) if segment is None else segment
        c = slice(None) if config is None else config
        nt = int(np.sum(self.n_triggers[s, c]))
        h = np.asarray(self.hits[s, c]).reshape(-1, 3).sum(axis=0)
        return CountSummary(nt, int(h[0]), int(h[1]), int(h[2]))

    def per_point(self, config: int | None = None) -> list[CountSummary]:
        return [self.summary(config, s) for s in range(len(self.phases))]

    @property
    def total_triggers(self) -> int:
        return int(self.n_triggers.sum())

    @classmethod
    def from_records(cls, mode, phases, n_triggers, records: PulseRecords, **kw) -> "EventLog":
        """Build the hit table from rows, e.g. after reading a log back from disk."""
        phases = np.asarray(phases, dtype=float)
        hits = np.zeros((len(phases), 2, 3), dtype=np.int64)
        key = records.segment.astype(np.int64) * 2 + records.config_bit
        size = 2 * len(phases)
        for j, col in enumerate((records.d1, records.d2, records.d1 & records.d2)):
            hits[..., j] = np.bincount(key, weights=col, minlength=size).reshape(-1, 2).astype(np.int64)
        return cls(mode, phases, np.asarray(n_triggers, dtype=np.int64), hits, records, **kw)


def _format_rows(rec: PulseRecords, phases: np.ndarray) -> str:
    phase_txt = [repr(float(p)) for p in phases]
    lines = []
    for i, s, c, a, b, d in zip(
        rec.pulse_index.tolist(), rec.segment.tolist(), rec.config_bit.tolist(),
        rec.d1.tolist(), rec.d2.tolist(), rec.emission_delay.tolist(),
    ):
        delay = "" if d != d else f"{d:.6f}"
        lines.append(f"{i},{phase_txt[s]},{c},{int(a)},{int(b)},{delay}\n")
    return "".join(lines)


class LogWriter:
    """Sequential sink that appends record batches in trigger order."""

    def __init__(self, out_dir, phases):
        self.dir = Path(out_dir)
        self.phases = np.asarray(phases, dtype=float)
        self.part = self.dir / "events.csv.part"
        self._fh = None
        self._last = -1

    def __enter__(self):
        try:
            self.dir.mkdir(parents=True, exist_ok=True)
            (self.dir / PARTIAL_MARKER).unlink(missing_ok=True)
            self._fh = open(self.part, "w", encoding="utf-8", newline="")
            self._fh.write(",".join(EVENTS_HEADER) + "\n")
        except OSError as exc:
            raise LogError(f"cannot open event log in {self.dir}: {exc}") from exc
        return self

    def append(self, rec: PulseRecords):
        if len(rec) == 0:
            return
        if rec.pulse_index[0] <= self._last:
            raise LogError("records must arrive in increasing pulse order")
        self._last = int(rec.pulse_index[-1])
        try:
            self._fh.write(_format_rows(rec, self.phases))
        except OSError as exc:
            raise LogError(f"writing event log failed: {exc}") from exc

    def __exit__(self, exc_type, exc, tb):
        self._fh.close()
        if exc_type is None:
            os.replace(self.part, self.dir / "events.csv")
        else:
            try:
                (self.dir / PARTIAL_MARKER).write_text(
                    f"run aborted after pulse {self._last}: {exc}\n", encoding="utf-8"
                )
            except OSError:
                pass
        return False


def write_counters(out_dir, phases, n_triggers):
    path = Path(out_dir) / "counters.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(COUNTERS_HEADER) + "\n")
        for s, p in enumerate(phases):
            for c in (0, 1):
                if n_triggers[s, c]:
                    fh.write(f"{float(p)!r},{c},{int(n_triggers[s, c])}\n")


def write_histogram(out_dir, hist: Histogram):
    path = Path(out_dir) / "histogram.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(HISTOGRAM_HEADER) + "\n")
        for t, n in zip(hist.tau.tolist(), hist.counts.tolist()):
            fh.write(f"{t:.6f},{int(n)}\n")


def read_histogram(path) -> Histogram:
    data = _read_csv(Path(path), HISTOGRAM_HEADER)
    if not data:
        raise LogError(f"{path}: empty histogram")
    tau = np.array([float(r[0]) for r in data])
    counts = np.array([int(r[1]) for r in data], dtype=np.int64)
    return Histogram(tau, counts)


def _read_csv(path: Path, header):
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            got = next(reader, None)
            if got != header:
                raise LogError(f"{path}: expected header {','.join(header)}, got {got}")
            return list(reader)
    except OSError as exc:
        raise LogError(f"cannot read {path}: {exc}") from exc


def read_log(log_dir, mode: str = "unknown") -> EventLog:
    """Load ``events.csv`` and ``counters.csv`` (and ``histogram.csv`` if present)."""
    d = Path(log_dir)
    if (d / PARTIAL_MARKER).exists():
        raise LogError(f"{d} holds a partial log from an aborted run")
    counters = _read_csv(d / "counters.csv", COUNTERS_HEADER)
    phase_text: list[str] = []
    entries = []
    for row in counters:
        if row[0] not in phase_text:
            phase_text.append(row[0])
        entries.append((phase_text.index(row[0]), int(row[1]), int(row[2])))
    n_triggers = np.zeros((len(phase_text), 2), dtype=np.int64)
    for s, c, n in entries:
        n_triggers[s, c] += n
    index = {t: i for i, t in enumerate(phase_text)}
    # events store the same repr() text, but match numerically for robustness
    phases = np.array([float(t) for t in phase_text])
    rows = _read_csv(d / "events.csv", EVENTS_HEADER)
    n = len(rows)
    pulse = np.empty(n, np.int64)
    seg = np.empty(n, np.int32)
    cfg = np.empty(n, np.uint8)
    d1 = np.empty(n, bool)
    d2 = np.empty(n, bool)
    delay = np.empty(n, float)
    for k, r in enumerate(rows):
        pulse[k] = int(r[0])
        s = index.get(r[1])
        if s is None:
            hit = np.flatnonzero(np.isclose(phases, float(r[1]), rtol=0, atol=1e-12))
            if hit.size == 0:
                raise LogError(f"events.csv row {k + 2}: phase {r[1]} missing from counters")
            s = int(hit[0])
        seg[k] = s
        cfg[k] = int(r[2])
        d1[k] = r[3] == "1"
        d2[k] = r[4] == "1"
        delay[k] = float(r[5]) if r[5] else np.nan
    rec = PulseRecords(pulse, seg, cfg, d1, d2, delay)
    hist = read_histogram(d / "histogram.csv") if (d / "histogram.csv").exists() else None
    return EventLog.from_records(mode, phases, n_triggers, rec, histogram=hist)
