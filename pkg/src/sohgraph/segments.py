"""Threshold-triggered extraction of the per-cycle node feature."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SegmentTruncated, ThresholdNeverCrossed, ValidationError
from .series_core import VOLTAGE_BAND, VoltageCycle

PAD_POLICIES = ("error", "pad_last")


@dataclass(frozen=True)
class SegmentSpec:
    v_ref: float
    m: int

    def __post_init__(self):
        if int(self.m) < 2:
            raise ValidationError("segment length m must be >= 2")
        lo, hi = VOLTAGE_BAND
        if not (lo <= float(self.v_ref) <= hi):
            raise ValidationError(f"v_ref {self.v_ref} outside plausible band [{lo}, {hi}] V")
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "v_ref", float(self.v_ref))


@dataclass(frozen=True, eq=False)
class NodeFeature:
    cycle_index: int
    x: np.ndarray
    theta: int
    padded: bool = False


def crossing_step(samples, v_ref: float) -> int:
    """First index with ``samples[t] <= v_ref``, or -1."""
    hits = np.flatnonzero(np.asarray(samples) <= v_ref)
    return int(hits[0]) if hits.size else -1


def select_segment(cycle: VoltageCycle, spec: SegmentSpec, pad_policy: str = "error") -> NodeFeature:
    if pad_policy not in PAD_POLICIES:
        raise ValidationError(f"unknown pad policy {pad_policy!r}")
    samples = cycle.samples
    theta = crossing_step(samples, spec.v_ref)
    if theta < 0:
        raise ThresholdNeverCrossed(cycle.index, spec.v_ref)
    x = samples[theta : theta + spec.m]
    padded = False
    if x.size < spec.m:
        if pad_policy == "error":
            raise SegmentTruncated(cycle.index, int(x.size), spec.m)
        x = np.concatenate((x, np.full(spec.m - x.size, samples[-1])))
        padded = True
    x = np.array(x, dtype=np.float64)
    x.setflags(write=False)
    return NodeFeature(cycle.index, x, theta, padded)
