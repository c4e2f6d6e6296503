"""Time-series primitives: cycle containers, concatenation, sliding window
statistics and z-normalized distance."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .errors import EmptyCycle, EmptyInput, FlatWindow, ValidationError, WindowTooLong

VOLTAGE_BAND = (1.5, 4.5)
SOH_MAX = 1.2


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class VoltageCycle:
    """One discharge cycle sampled at a fixed interval ``dt`` (seconds)."""

    index: int
    samples: np.ndarray
    dt: float = 1.0
    soh: Optional[float] = None
    band: tuple = VOLTAGE_BAND

    def __post_init__(self):
        samples = _frozen(self.samples)
        if samples.ndim != 1:
            raise ValidationError(f"cycle {self.index}: samples must be one-dimensional")
        if samples.size == 0:
            raise EmptyCycle(self.index)
        if not np.all(np.isfinite(samples)):
            raise ValidationError(f"cycle {self.index}: non-finite voltage sample")
        lo, hi = self.band
        if samples.min() < lo or samples.max() > hi:
            raise ValidationError(
                f"cycle {self.index}: voltage outside plausible band [{lo}, {hi}] V"
            )
        if not self.dt > 0:
            raise ValidationError(f"cycle {self.index}: dt must be positive")
        if self.soh is not None:
            soh = float(self.soh)
            if not (0.0 < soh <= SOH_MAX):
                raise ValidationError(f"cycle {self.index}: soh {soh} outside (0, {SOH_MAX}]")
            object.__setattr__(self, "soh", soh)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "index", int(self.index))

    def __len__(self):
        return self.samples.size

    def __eq__(self, other):
        if not isinstance(other, VoltageCycle):
            return NotImplemented
        return (
            self.index == other.index
            and self.dt == other.dt
            and self.soh == other.soh
            and np.array_equal(self.samples, other.samples)
        )

    __hash__ = None

    def with_samples(self, samples) -> "VoltageCycle":
        return VoltageCycle(self.index, samples, self.dt, self.soh, self.band)


@dataclass(frozen=True, eq=False)
class ConcatSeries:
    values: np.ndarray
    boundaries: np.ndarray
    cycle_indices: tuple = ()

    @property
    def phi(self) -> int:
        return int(self.values.size)

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(np.append(self.boundaries, self.phi))

    def split(self) -> list:
        """Cut the flat series back into per-cycle arrays."""
        return np.split(np.asarray(self.values), self.boundaries[1:])


@dataclass(frozen=True, eq=False)
class WindowStats:
    means: np.ndarray
    stds: np.ndarray
    m: int


def concat_cycles(cycles: Sequence[VoltageCycle]) -> ConcatSeries:
    cycles = list(cycles)
    if not cycles:
        raise EmptyInput("no cycles to concatenate")
    for c in cycles:
        if len(c.samples) == 0:
            raise EmptyCycle(c.index)
    lengths = np.array([len(c.samples) for c in cycles], dtype=np.int64)
    boundaries = np.concatenate(([0], np.cumsum(lengths)[:-1]))
    values = np.concatenate([c.samples for c in cycles])
    values.setflags(write=False)
    boundaries.setflags(write=False)
    return ConcatSeries(values, boundaries, tuple(c.index for c in cycles))


def as_series(values) -> ConcatSeries:
    """Wrap a bare 1-D array as a single-segment series."""
    values = _frozen(values)
    if values.size == 0:
        raise EmptyInput("empty series")
    boundaries = np.zeros(1, dtype=np.int64)
    boundaries.setflags(write=False)
    return ConcatSeries(values, boundaries, (1,))


@njit(cache=True)
def _two_pass(x, q, m):
    s = 0.0
    for t in range(m):
        s += x[q + t]
    mean = s / m
    m2 = 0.0
    for t in range(m):
        d = x[q + t] - mean
        m2 += d * d
    return mean, m2


@njit(cache=True)
def _running_moments(x, m, refresh):
    # Add/remove update of mean and M2. `err` bounds the rounding error the
    # updates have accumulated in M2; the window is re-anchored by an exact
    # two-pass evaluation every `refresh` windows, or earlier when M2 has
    # shrunk to within 1e10 of that bound (a large value just left).
    n = x.size - m + 1
    means = np.empty(n)
    stds = np.empty(n)
    eps = 2.220446049250313e-16
    mean = 0.0
    m2 = 0.0
    err = 0.0
    for q in range(n):
        if q % refresh != 0:
            old = x[q - 1]
            new = x[q + m - 1]
            step = new - old
            new_mean = mean + step / m
            a = step * (new - new_mean)
            b = step * (old - mean)
            m2 += a + b
            err += 4.0 * eps * (abs(a) + abs(b) + abs(m2))
            mean = new_mean
        if q % refresh == 0 or m2 <= 1e10 * err:
            mean, m2 = _two_pass(x, q, m)
            err = 0.0
        means[q] = mean
        stds[q] = np.sqrt(m2 / m)
    return means, stds


def flat_window_mask(values: np.ndarray, m: int) -> np.ndarray:
    """True where every sample of the length-``m`` window is identical."""
    values = np.asarray(values, dtype=np.float64)
    changes = np.concatenate(([0], np.cumsum(values[1:] != values[:-1])))
    return changes[m - 1 :] - changes[: values.size - m + 1] == 0


def sliding_stats(series, m: int, refresh: Optional[int] = None) -> WindowStats:
    values = np.ascontiguousarray(
        series.values if isinstance(series, ConcatSeries) else series, dtype=np.float64
    )
    m = int(m)
    if m < 1:
        raise ValidationError("window length must be >= 1")
    if m > values.size:
        raise WindowTooLong(f"window length {m} exceeds series length {values.size}")
    means, stds = _running_moments(values, m, int(refresh or max(m, 64)))
    flat = flat_window_mask(values, m)
    stds[flat] = 0.0
    means[flat] = values[: means.size][flat]
    means.setflags(write=False)
    stds.setflags(write=False)
    return WindowStats(means, stds, m)


def znorm(window, flat_policy: str = "zero") -> np.ndarray:
    """Z-normalize with population std; a constant window maps to zeros."""
    w = np.asarray(window, dtype=np.float64)
    if w.size == 0 or np.all(w == w[0]):
        if flat_policy == "reject":
            raise FlatWindow("constant window cannot be z-normalized")
        return np.zeros_like(w)
    mu = w.mean()
    d = w - mu
    return d / np.sqrt(np.dot(d, d) / w.size)


def znorm_distance(a, b, *, normalize: bool = True, flat_policy: str = "zero") -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError(f"windows must be equal-length vectors, got {a.shape} and {b.shape}")
    if normalize:
        a = znorm(a, flat_policy)
        b = znorm(b, flat_policy)
    d = a - b
    return float(np.sqrt(np.dot(d, d)))
