"""Dataset ingestion, the synthetic degradation generator, and persistence.

CSV layout
----------
cycles file: header ``cycle,t,voltage``, one row per sample, ``t`` in
seconds and ``voltage`` in volts. labels file: header ``cycle,soh``, one row
per cycle. Both are UTF-8 with LF line endings and ``.`` as decimal point.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import wrightomega

from .errors import (
    ConfigError,
    CorruptArtifact,
    ArtifactError,
    ParseError,
    SchemaError,
    ValidationError,
    VersionError,
)
from .series_core import SOH_MAX, VoltageCycle

log = logging.getLogger(__name__)

DT_TOLERANCE = 1e-6


@dataclass(frozen=True, eq=False)
class BatteryDataset:
    battery_id: str
    cycles: tuple
    nominal_capacity: float = 1.1
    dt: float = 1.0

    def __post_init__(self):
        cycles = tuple(self.cycles)
        object.__setattr__(self, "cycles", cycles)
        idx = [c.index for c in cycles]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValidationError("cycle indices must be strictly increasing")
        for c in cycles:
            if abs(c.dt - self.dt) > DT_TOLERANCE:
                raise ValidationError(f"cycle {c.index}: dt {c.dt} differs from dataset dt {self.dt}")
            if c.soh is not None and not (0.0 < c.soh <= SOH_MAX):
                raise ValidationError(f"cycle {c.index}: soh {c.soh} out of range")

    def __len__(self):
        return len(self.cycles)

    def __eq__(self, other):
        if not isinstance(other, BatteryDataset):
            return NotImplemented
        return (
            self.battery_id == other.battery_id
            and self.nominal_capacity == other.nominal_capacity
            and self.dt == other.dt
            and self.cycles == other.cycles
        )

    __hash__ = None

    def by_index(self) -> dict:
        return {c.index: c for c in self.cycles}

    def cycle(self, index: int) -> VoltageCycle:
        try:
            return self.by_index()[index]
        except KeyError:
            raise ValidationError(f"battery {self.battery_id} has no cycle {index}") from None

    def first(self, k: int) -> list:
        return [c for c in self.cycles if c.index <= k]

    def eol_cycle(self, threshold: float = 0.8) -> int:
        """First cycle whose SOH is at or below ``threshold``; else the last cycle."""
        for c in self.cycles:
            if c.soh is not None and c.soh <= threshold:
                return c.index
        return self.cycles[-1].index


# --- atomic file output -----------------------------------------------------


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fmt_float(v: float) -> str:
    """Shortest decimal that round-trips to the same float64."""
    return repr(float(v))


# --- CSV ingestion ----------------------------------------------------------


def _read_rows(path, header):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ArtifactError(f"cannot read {path}: {exc}") from exc
    reader = csv.reader(io.StringIO(text))
    try:
        first = next(reader)
    except StopIteration:
        raise SchemaError(f"{path.name}: empty file") from None
    if [h.strip() for h in first] != list(header):
        raise SchemaError(f"{path.name}: header {first!r}, expected {','.join(header)}")
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"{path.name}: expected {len(header)} fields, got {len(row)}", lineno)
        yield lineno, row


def _parse_int(text, lineno, name):
    try:
        v = int(text)
    except ValueError:
        raise ParseError(f"{name} {text!r} is not an integer", lineno) from None
    if v < 1:
        raise ParseError(f"{name} must be positive, got {v}", lineno)
    return v


def _parse_float(text, lineno, name):
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"{name} {text!r} is not a number", lineno) from None
    if not math.isfinite(v):
        raise ParseError(f"{name} is not finite", lineno)
    return v


def load_battery_csv(cycles_path, labels_path, battery_id: Optional[str] = None, nominal_capacity: float = 1.1) -> BatteryDataset:
    times: dict = {}
    volts: dict = {}
    order = []
    for lineno, (c, t, v) in _read_rows(cycles_path, ("cycle", "t", "voltage")):
        ci = _parse_int(c, lineno, "cycle")
        if ci not in times:
            if order and ci < order[-1]:
                raise ParseError(f"cycle {ci} appears after cycle {order[-1]}", lineno)
            order.append(ci)
            times[ci], volts[ci] = [], []
        elif ci != order[-1]:
            raise ParseError(f"rows of cycle {ci} are not contiguous", lineno)
        times[ci].append(_parse_float(t, lineno, "t"))
        volts[ci].append(_parse_float(v, lineno, "voltage"))
    if not order:
        raise SchemaError("cycles file has no samples")

    labels = {}
    for lineno, (c, s) in _read_rows(labels_path, ("cycle", "soh")):
        ci = _parse_int(c, lineno, "cycle")
        if ci in labels:
            raise ParseError(f"duplicate label for cycle {ci}", lineno)
        labels[ci] = _parse_float(s, lineno, "soh")

    dt = None
    for ci in order:
        t = np.asarray(times[ci])
        steps = np.diff(t)
        if np.any(steps <= 0):
            raise ValidationError(f"cycle {ci}: time is not strictly increasing")
        if steps.size:
            if dt is None:
                dt = float(steps[0])
            if np.any(np.abs(steps - dt) > DT_TOLERANCE):
                raise ValidationError(f"cycle {ci}: sampling interval is not uniform at dt={dt}")
    if dt is None:
        raise ValidationError("cannot infer the sampling interval: every cycle has one sample")

    missing = [ci for ci in order if ci not in labels]
    if missing:
        raise ValidationError(f"cycle {missing[0]} has no SOH label")
    extra = sorted(set(labels) - set(order))
    if extra:
        raise ValidationError(f"label for cycle {extra[0]} has no samples")

    cycles = [VoltageCycle(ci, volts[ci], dt, labels[ci]) for ci in order]
    bid = battery_id or Path(cycles_path).stem
    return BatteryDataset(bid, tuple(cycles), nominal_capacity, dt)


def battery_csv_text(ds: BatteryDataset) -> tuple:
    rows = ["cycle,t,voltage"]
    for c in ds.cycles:
        for i, v in enumerate(c.samples):
            rows.append(f"{c.index},{fmt_float(i * c.dt)},{fmt_float(v)}")
    labels = ["cycle,soh"]
    for c in ds.cycles:
        if c.soh is not None:
            labels.append(f"{c.index},{fmt_float(c.soh)}")
    return "\n".join(rows) + "\n", "\n".join(labels) + "\n"


def write_battery_csv(ds: BatteryDataset, cycles_path, labels_path) -> None:
    cycles_text, labels_text = battery_csv_text(ds)
    atomic_write_text(cycles_path, cycles_text)
    atomic_write_text(labels_path, labels_text)


# --- synthetic generator ----------------------------------------------------


@dataclass(frozen=True)
class AnomalySpec:
    """Disturbance added to one cycle over [position, position + width).

    "burst" rings for `edge` samples at both ends, so any window that is not
    aligned with the disturbance loses a large share of its energy; this is
    what makes the onset recoverable from the profile peak. "bump" is a smooth
    raised cosine whose profile peak drifts toward the flattest windows.
    """

    position: int
    amplitude: float = 0.03
    width: int = 100
    cycle: int = 2
    kind: str = "burst"
    edge: int = 3

    def shape(self) -> np.ndarray:
        k = np.arange(self.width)
        if self.kind == "bump":
            return self.amplitude * 0.5 * (1.0 - np.cos(2.0 * np.pi * (k + 1) / (self.width + 1)))
        if self.kind == "burst":
            ring = (-1.0) ** k
            e = min(self.edge, self.width)
            mask = (k < e) | (k >= self.width - e)
            return self.amplitude * np.where(mask, ring, 0.0)
        raise ConfigError(f"unknown anomaly kind {self.kind!r}")


@dataclass(frozen=True)
class SynthConfig:
    total_cycles: int = 600
    base_duration: float = 800.0
    dt: float = 4.0
    knee_cycle: int = 380
    linear_rate: float = 2.5e-4
    knee_rate: float = 3.6e-6
    knee_exponent: float = 2.0
    soh_floor: float = 0.7
    v_start: float = 3.3
    v_cutoff: float = 2.0
    plateau_drop: float = 0.3  # volts shed along the plateau over a full cycle
    tail_tau: float = 0.05  # tail time constant as a fraction of the cycle duration
    noise_std: float = 1e-3
    anomaly: Optional[AnomalySpec] = None
    seed: int = 0
    nominal_capacity: float = 1.1
    battery_id: str = "synthetic"

    def __post_init__(self):
        if self.total_cycles < 1:
            raise ConfigError("total_cycles must be >= 1")
        if self.base_duration <= 0 or self.dt <= 0 or self.dt > self.base_duration:
            raise ConfigError("need 0 < dt <= base_duration")
        if self.linear_rate < 0 or self.knee_rate < 0 or self.knee_exponent <= 0:
            raise ConfigError("degradation rates must be non-negative, exponent positive")
        if not (0.0 < self.soh_floor <= 1.0):
            raise ConfigError("soh_floor must be in (0, 1]")
        if not (self.v_cutoff < self.v_start):
            raise ConfigError("v_cutoff must be below v_start")
        if not (0.0 <= self.plateau_drop < self.v_start - self.v_cutoff):
            raise ConfigError("plateau_drop must be smaller than the full voltage swing")
        if self.tail_tau <= 0:
            raise ConfigError("tail_tau must be positive")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be non-negative")
        if self.anomaly is not None and self.anomaly.width < 1:
            raise ConfigError("anomaly width must be >= 1")
        if self.anomaly is not None and self.anomaly.kind not in ("burst", "bump"):
            raise ConfigError(f"unknown anomaly kind {self.anomaly.kind!r}")

    def soh(self, c) -> np.ndarray:
        c = np.asarray(c, dtype=np.float64)
        s = 1.0 - self.linear_rate * c - self.knee_rate * np.maximum(0.0, c - self.knee_cycle) ** self.knee_exponent
        return np.maximum(s, self.soh_floor)

    def duration(self, c) -> np.ndarray:
        return self.base_duration * self.soh(c)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        if d.get("anomaly") is not None:
            d["anomaly"] = AnomalySpec(**d["anomaly"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"synth config: {exc}") from None


@dataclass(frozen=True)
class DischargeCurve:
    """Noise-free voltage on normalized time ``u = t / T`` in [0, 1].

    ``V(u) = p0 - drop*u - amp*exp((u - 1)/tau)`` with ``V(0) = v_start`` and
    ``V(1) = v_cutoff``. Because the whole curve is expressed in ``u``, a cycle
    of shorter duration is a time-compressed copy of the first one.
    """

    v_start: float
    v_cutoff: float
    drop: float
    tau: float
    p0: float = field(init=False)
    amp: float = field(init=False)

    def __post_init__(self):
        e0 = math.exp(-1.0 / self.tau)
        amp = (self.v_start - self.v_cutoff - self.drop) / (1.0 - e0)
        object.__setattr__(self, "amp", amp)
        object.__setattr__(self, "p0", self.v_start + amp * e0)

    @classmethod
    def from_config(cls, cfg: SynthConfig) -> "DischargeCurve":
        return cls(cfg.v_start, cfg.v_cutoff, cfg.plateau_drop, cfg.tail_tau)

    def voltage(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        return self.p0 - self.drop * u - self.amp * np.exp((u - 1.0) / self.tau)

    def crossing_u(self, v: float) -> float:
        """Normalized time at which the curve falls to ``v`` (closed form)."""
        if v >= self.v_start:
            return 0.0
        if v <= self.v_cutoff:
            return 1.0
        c = self.p0 - v
        if self.drop == 0.0:
            return 1.0 + self.tau * math.log(c / self.amp)
        z = math.log(self.amp / (self.drop * self.tau)) + (c / self.drop - 1.0) / self.tau
        return c / self.drop - self.tau * float(np.real(wrightomega(z)))

    def crossing_time(self, v: float, duration: float) -> float:
        return self.crossing_u(v) * duration


def crossing_step(cfg: SynthConfig, cycle: int, v: float) -> int:
    """Index of the first noise-free sample at or below ``v`` in ``cycle``."""
    t = DischargeCurve.from_config(cfg).crossing_time(v, float(cfg.duration(cycle)))
    return int(math.ceil(t / cfg.dt - 1e-9))


def synth_cycle_samples(cfg: SynthConfig, cycle: int, curve: Optional[DischargeCurve] = None) -> np.ndarray:
    curve = curve or DischargeCurve.from_config(cfg)
    duration = float(cfg.duration(cycle))
    n = int(math.floor(duration / cfg.dt + 1e-9)) + 1
    return curve.voltage(np.arange(n) * cfg.dt / duration)


def synth_battery(cfg: SynthConfig = SynthConfig()) -> BatteryDataset:
    rng = np.random.default_rng(cfg.seed)
    curve = DischargeCurve.from_config(cfg)
    cycles = []
    for c in range(1, cfg.total_cycles + 1):
        v = synth_cycle_samples(cfg, c, curve)
        if cfg.noise_std > 0:
            v = v + rng.normal(0.0, cfg.noise_std, size=v.size)
        if cfg.anomaly is not None and cfg.anomaly.cycle == c:
            a = cfg.anomaly
            if a.position < 0 or a.position + a.width > v.size:
                raise ConfigError(f"anomaly [{a.position}, {a.position + a.width}) outside cycle {c} of {v.size} samples")
            v[a.position : a.position + a.width] += a.shape()
        cycles.append(VoltageCycle(c, v, cfg.dt, float(cfg.soh(c))))
    return BatteryDataset(cfg.battery_id, tuple(cycles), cfg.nominal_capacity, cfg.dt)


# --- JSON artifacts ---------------------------------------------------------

MODEL_SCHEMA = (1, 1)
REPORT_SCHEMA = (1, 0)


def _checksum(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def encode_array(a) -> object:
    # json renders floats with repr(), the shortest decimal that round-trips
    # float64 exactly (never more than 17 significant digits).
    return np.asarray(a, dtype=np.float64).tolist()


def _write_versioned(path, kind: str, version: tuple, payload: dict) -> str:
    payload = dict(payload, kind=kind, schema_version=f"{version[0]}.{version[1]}")
    doc = dict(payload, checksum=_checksum(payload))
    atomic_write_text(path, json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return doc["checksum"]


def _read_versioned(path, kind: str, version: tuple) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ArtifactError(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptArtifact(f"{path.name}: not valid JSON ({exc.msg})") from exc
    if not isinstance(doc, dict) or doc.get("kind") != kind:
        raise CorruptArtifact(f"{path.name}: not a {kind} document")
    try:
        major, minor = (int(p) for p in str(doc["schema_version"]).split("."))
    except (KeyError, ValueError):
        raise CorruptArtifact(f"{path.name}: missing or malformed schema_version") from None
    if major != version[0]:
        raise VersionError(f"{path.name}: schema {major}.{minor} unsupported (reader is {version[0]}.x)")
    stored = doc.pop("checksum", None)
    if stored != _checksum(doc):
        raise CorruptArtifact(f"{path.name}: checksum mismatch")
    doc["_checksum"] = stored
    doc["_minor"] = minor
    if minor < version[1]:
        log.warning("%s: schema %d.%d is older than %d.%d; defaults fill new fields", path.name, major, minor, *version)
    return doc


def save_model(model, path) -> str:
    """Persist a :class:`sohgraph.pipeline.TrainedModel`; returns its checksum."""
    from .pipeline import model_to_payload

    return _write_versioned(path, "sohgraph-model", MODEL_SCHEMA, model_to_payload(model))


def load_model(path):
    from .pipeline import model_from_payload

    return model_from_payload(_read_versioned(path, "sohgraph-model", MODEL_SCHEMA))


def save_report(report, path) -> str:
    from .pipeline import report_to_payload

    return _write_versioned(path, "sohgraph-report", REPORT_SCHEMA, report_to_payload(report))


def load_report(path):
    from .pipeline import report_from_payload

    return report_from_payload(_read_versioned(path, "sohgraph-report", REPORT_SCHEMA))
