"""Correlation graphs over cycle segments.

The base graph holds ``n`` early-life cycles taken every ``d`` cycles. Every
training or online cycle is appended to it as a last node that receives an
edge from each base node and sends none, so the adjacency stays upper
triangular with a unit diagonal.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .errors import ConstantInput, DimensionMismatch, MissingCycle, MissingLabel, ValidationError
from .segments import NodeFeature, SegmentSpec, select_segment
from .series_core import VoltageCycle

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CycleGraph:
    x: np.ndarray
    a: np.ndarray
    y: np.ndarray  # NaN marks an unlabeled node
    node_cycles: tuple

    def __post_init__(self):
        n = self.x.shape[0]
        if self.a.shape != (n, n) or self.y.shape != (n,) or len(self.node_cycles) != n:
            raise DimensionMismatch(
                f"inconsistent graph: x {self.x.shape}, a {self.a.shape}, "
                f"y {self.y.shape}, {len(self.node_cycles)} node cycles"
            )
        for arr in (self.x, self.a, self.y):
            arr.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return self.x.shape[0]

    @property
    def width(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class BaseGraphConfig:
    k: int = 100
    n: int = 10
    d: int = 10

    def __post_init__(self):
        if self.n < 1 or self.d < 1 or self.k < 1:
            raise ValidationError("k, n and d must be positive")
        if 1 + (self.n - 1) * self.d > self.k:
            raise ValidationError(
                f"base graph cycles 1..{1 + (self.n - 1) * self.d} exceed the first k={self.k}"
            )

    @property
    def cycle_indices(self) -> list:
        return [1 + i * self.d for i in range(self.n)]


def pearson(x, y) -> float:
    """Population Pearson coefficient; raises ConstantInput on zero variance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DimensionMismatch(f"pearson needs equal-length vectors, got {x.shape}, {y.shape}")
    if x.size < 2:
        raise ValidationError("pearson needs at least two samples")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise ConstantInput("zero-variance input")
    dx = x - x.mean()
    dy = y - y.mean()
    den = np.sqrt(np.dot(dx, dx) * np.dot(dy, dy))
    if den == 0.0:
        raise ConstantInput("zero-variance input")
    return float(np.clip(np.dot(dx, dy) / den, -1.0, 1.0))


def edge_weight(xi, xj) -> float:
    try:
        r = pearson(xi, xj)
    except ConstantInput:
        log.warning("constant node feature; edge weight set to 0")
        return 0.0
    return min(max(r, 0.0), 1.0)


def _lookup(cycles) -> dict:
    if isinstance(cycles, Mapping):
        return dict(cycles)
    return {c.index: c for c in cycles}


def build_base_graph(
    cycles: Union[Sequence[VoltageCycle], Mapping[int, VoltageCycle]],
    cfg: BaseGraphConfig,
    spec: SegmentSpec,
    pad_policy: str = "error",
) -> CycleGraph:
    by_index = _lookup(cycles)
    feats = []
    labels = []
    for idx in cfg.cycle_indices:
        cycle = by_index.get(idx)
        if cycle is None:
            raise MissingCycle(f"base graph needs cycle {idx}")
        if cycle.soh is None:
            raise MissingLabel(f"base graph cycle {idx} has no SOH label")
        feats.append(select_segment(cycle, spec, pad_policy).x)
        labels.append(cycle.soh)
    x = np.vstack(feats)
    n = x.shape[0]
    a = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            a[i, j] = edge_weight(x[i], x[j])
    return CycleGraph(x, a, np.array(labels, dtype=np.float64), tuple(cfg.cycle_indices))


def augment_graph(base: CycleGraph, feat: Union[NodeFeature, np.ndarray], label: Optional[float] = None) -> CycleGraph:
    """Return a new graph with ``feat`` appended as the last node."""
    if isinstance(feat, NodeFeature):
        row, cycle_index = feat.x, feat.cycle_index
    else:
        row, cycle_index = np.asarray(feat, dtype=np.float64), -1
    if row.shape != (base.width,):
        raise DimensionMismatch(f"feature of shape {row.shape} does not fit width {base.width}")
    n = base.n_nodes
    x = np.vstack((base.x, row))
    a = np.zeros((n + 1, n + 1))
    a[:n, :n] = base.a
    a[n, n] = 1.0
    for i in range(n):
        a[i, n] = edge_weight(base.x[i], row)
    y = np.append(base.y, np.nan if label is None else float(label))
    return CycleGraph(x, a, y, base.node_cycles + (cycle_index,))


def save_graph_csv(graph: CycleGraph, features_path, adjacency_path) -> None:
    from .data_io import atomic_write_text

    m = graph.width
    rows = ["cycle," + ",".join(f"x{t}" for t in range(m))]
    for c, row in zip(graph.node_cycles, graph.x):
        rows.append(f"{c}," + ",".join(repr(float(v)) for v in row))
    atomic_write_text(features_path, "\n".join(rows) + "\n")
    rows = ["cycle," + ",".join(str(c) for c in graph.node_cycles)]
    for c, row in zip(graph.node_cycles, graph.a):
        rows.append(f"{c}," + ",".join(repr(float(v)) for v in row))
    atomic_write_text(adjacency_path, "\n".join(rows) + "\n")
