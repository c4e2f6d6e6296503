"""Graph convolutional SOH estimator with hand-written backpropagation.

Model, per graph with nodes ``N``::

    Ahat = D^-1/2 A D^-1/2                  (D = row sums of A)
    H    = relu(Ahat X W_gcn)                N x h
    a    = softmax(H u)                      attention over nodes
    c    = sum_i a_i H_i                     graph context, h
    Z    = relu([H_i ; c] W_dense + b_dense) N x r
    yhat = Z w_out + b_out                   one SOH estimate per node

Loss is the sum of squared errors over labeled nodes, summed over graphs.
Everything runs in float64; graphs sharing a node count are stacked into
3-D arrays so that one epoch is a few batched matrix products.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DivergenceDetected, LengthMismatch, NonPositiveDegree, ShapeMismatch, StaleCache
from .graph import CycleGraph

log = logging.getLogger(__name__)

PARAM_NAMES = ("w_gcn", "attn_u", "w_dense", "b_dense", "w_out", "b_out")


@dataclass(eq=False)
class GcnParams:
    w_gcn: np.ndarray
    attn_u: np.ndarray
    w_dense: np.ndarray
    b_dense: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray  # 0-d

    def __post_init__(self):
        for name in PARAM_NAMES:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        m, h = self.w_gcn.shape
        r = self.b_dense.shape[0]
        expected = {
            "attn_u": (h,),
            "w_dense": (2 * h, r),
            "b_dense": (r,),
            "w_out": (r,),
            "b_out": (),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ShapeMismatch(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def shapes(self) -> dict:
        return {name: getattr(self, name).shape for name in PARAM_NAMES}

    @property
    def m(self) -> int:
        return self.w_gcn.shape[0]

    @property
    def hidden(self) -> int:
        return self.w_gcn.shape[1]

    @property
    def dense(self) -> int:
        return self.b_dense.shape[0]

    def items(self):
        return ((name, getattr(self, name)) for name in PARAM_NAMES)

    def copy(self) -> "GcnParams":
        return GcnParams(**{k: v.copy() for k, v in self.items()})

    def zeros_like(self) -> "GcnParams":
        return GcnParams(**{k: np.zeros_like(v) for k, v in self.items()})

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for _, v in self.items())

    def equals(self, other: "GcnParams") -> bool:
        return all(np.array_equal(v, getattr(other, k)) for k, v in self.items())


def init_params(m: int, hidden: int = 128, dense: int = 300, seed: int = 0) -> GcnParams:
    """Glorot-uniform weights, zero biases, drawn in a fixed order."""
    rng = np.random.default_rng(seed)

    def glorot(fan_in, fan_out, shape):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=shape)

    return GcnParams(
        w_gcn=glorot(m, hidden, (m, hidden)),
        attn_u=glorot(hidden, 1, (hidden,)),
        w_dense=glorot(2 * hidden, dense, (2 * hidden, dense)),
        b_dense=np.zeros(dense),
        w_out=glorot(dense, 1, (dense,)),
        b_out=np.zeros(()),
    )


def normalize_adjacency(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    deg = a.sum(axis=-1)
    if np.any(deg <= 0.0):
        raise NonPositiveDegree("adjacency has a node with non-positive degree")
    s = 1.0 / np.sqrt(deg)
    return s[..., :, None] * a * s[..., None, :]


@dataclass(eq=False)
class ForwardCache:
    ahat: np.ndarray
    ax: np.ndarray
    p: np.ndarray
    h: np.ndarray
    alpha: np.ndarray
    c: np.ndarray
    q: np.ndarray
    z: np.ndarray
    yhat: np.ndarray


@dataclass(eq=False)
class GraphBatch:
    """Graphs of equal size stacked along a leading axis."""

    x: np.ndarray
    a: np.ndarray
    y: np.ndarray
    ahat: np.ndarray = field(init=False)
    ax: np.ndarray = field(init=False)

    def __post_init__(self):
        self.ahat = normalize_adjacency(self.a)
        self.ax = self.ahat @ self.x

    @classmethod
    def from_graphs(cls, graphs: Sequence[CycleGraph]) -> "GraphBatch":
        graphs = list(graphs)
        if not graphs:
            raise ShapeMismatch("empty graph collection")
        shape = graphs[0].x.shape
        for g in graphs:
            if g.x.shape != shape:
                raise ShapeMismatch(f"graph of shape {g.x.shape} in a batch of {shape}")
        return cls(
            np.stack([g.x for g in graphs]),
            np.stack([g.a for g in graphs]),
            np.stack([g.y for g in graphs]),
        )

    def __len__(self):
        return self.x.shape[0]


def _as_batch(graphs) -> GraphBatch:
    if isinstance(graphs, GraphBatch):
        return graphs
    if isinstance(graphs, CycleGraph):
        return GraphBatch.from_graphs([graphs])
    return GraphBatch.from_graphs(graphs)


def _forward(batch: GraphBatch, params: GcnParams) -> ForwardCache:
    if batch.x.shape[-1] != params.m:
        raise ShapeMismatch(f"feature width {batch.x.shape[-1]} does not match model width {params.m}")
    b, n, m = batch.ax.shape
    h_dim = params.hidden
    # node-wise products run on (graphs * nodes) rows for one large GEMM each
    p = (batch.ax.reshape(b * n, m) @ params.w_gcn).reshape(b, n, h_dim)
    h = np.maximum(p, 0.0)
    s = h @ params.attn_u
    s = s - s.max(axis=1, keepdims=True)
    e = np.exp(s)
    alpha = e / e.sum(axis=1, keepdims=True)
    c = np.einsum("bn,bnh->bh", alpha, h)
    q = (h.reshape(b * n, h_dim) @ params.w_dense[:h_dim]).reshape(b, n, -1)
    q += (c @ params.w_dense[h_dim:] + params.b_dense)[:, None, :]
    z = np.maximum(q, 0.0)
    yhat = z @ params.w_out + params.b_out
    return ForwardCache(batch.ahat, batch.ax, p, h, alpha, c, q, z, yhat)


def forward(graph, params: GcnParams):
    """Per-node predictions and the cache needed by :func:`backward`.

    A single :class:`CycleGraph` yields a 1-D prediction vector; a sequence of
    graphs or a :class:`GraphBatch` yields one row per graph.
    """
    batch = _as_batch(graph)
    cache = _forward(batch, params)
    if isinstance(graph, CycleGraph):
        return cache.yhat[0], cache
    return cache.yhat, cache


def predict(graph, params: GcnParams) -> np.ndarray:
    return forward(graph, params)[0]


def loss(predictions, labels) -> float:
    """Sum of squared errors; unlabeled (NaN) entries are ignored."""
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise LengthMismatch(f"{p.shape} predictions vs {y.shape} labels")
    mask = ~np.isnan(y)
    r = p[mask] - y[mask]
    return float(np.dot(r, r))


def backward(cache: ForwardCache, graph, params: GcnParams, labels=None) -> GcnParams:
    """Exact gradient of :func:`loss` with respect to every parameter."""
    batch = _as_batch(graph)
    y = batch.y if labels is None else np.asarray(labels, dtype=np.float64).reshape(batch.y.shape)
    if cache.yhat.shape != y.shape or cache.ax.shape != batch.ax.shape or cache.h.shape[-1] != params.hidden:
        raise StaleCache("cache does not belong to this graph/parameter set")
    h_dim = params.hidden
    mask = ~np.isnan(y)
    dy = np.where(mask, 2.0 * (cache.yhat - np.where(mask, y, 0.0)), 0.0)

    g_b_out = np.asarray(dy.sum())
    g_w_out = np.einsum("bn,bnr->r", dy, cache.z)
    dq = dy[..., None] * params.w_out
    dq *= cache.q > 0.0
    g_b_dense = dq.sum(axis=(0, 1))
    n_rows = dq.shape[0] * dq.shape[1]
    dq_flat = dq.reshape(n_rows, -1)
    dq_sum = dq.sum(axis=1)
    g_w_dense = np.concatenate(
        (cache.h.reshape(n_rows, h_dim).T @ dq_flat, cache.c.T @ dq_sum), axis=0
    )
    dh = (dq_flat @ params.w_dense[:h_dim].T).reshape(cache.h.shape)
    dc = dq_sum @ params.w_dense[h_dim:].T

    alpha = cache.alpha
    dh += alpha[..., None] * dc[:, None, :]
    dalpha = np.einsum("bnh,bh->bn", cache.h, dc)
    ds = alpha * (dalpha - (alpha * dalpha).sum(axis=1, keepdims=True))
    g_attn = np.einsum("bn,bnh->h", ds, cache.h)
    dh += ds[..., None] * params.attn_u

    dp = dh * (cache.p > 0.0)
    g_w_gcn = cache.ax.reshape(n_rows, -1).T @ dp.reshape(n_rows, h_dim)
    return GcnParams(g_w_gcn, g_attn, g_w_dense, g_b_dense, g_w_out, g_b_out)


def loss_and_grad(graphs, params: GcnParams):
    batch = _as_batch(graphs)
    cache = _forward(batch, params)
    return loss(cache.yhat, batch.y), backward(cache, batch, params)


# --- optimizer --------------------------------------------------------------


@dataclass(eq=False)
class AdamState:
    m: GcnParams
    v: GcnParams
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params: GcnParams, **hyper) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), **hyper)


def adam_step(params: GcnParams, grads: GcnParams, state: AdamState):
    """One bias-corrected Adam update; returns new params and new state."""
    if params.shapes != grads.shapes or params.shapes != state.m.shapes:
        raise ShapeMismatch("parameter, gradient and moment shapes disagree")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    new_p, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = getattr(grads, name)
        mom = b1 * getattr(state.m, name) + (1.0 - b1) * g
        vel = b2 * getattr(state.v, name) + (1.0 - b2) * (g * g)
        new_p[name] = p - state.lr * (mom / bc1) / (np.sqrt(vel / bc2) + state.eps)
        new_m[name] = mom
        new_v[name] = vel
    return GcnParams(**new_p), replace(state, m=GcnParams(**new_m), v=GcnParams(**new_v), step=t)


# --- training ---------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    hidden: int = 128
    dense: int = 300
    patience: Optional[int] = 500
    min_delta: float = 1e-7
    log_every: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.hidden < 1 or self.dense < 1:
            raise ConfigError("epochs, hidden and dense must be positive")
        if not (self.lr > 0 and 0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ConfigError("invalid Adam hyperparameters")
        if self.patience is not None and self.patience < 1:
            raise ConfigError("patience must be positive or None")


def train(graphs, init_seed: int = 0, config: TrainConfig = TrainConfig(), init: Optional[GcnParams] = None):
    """Full-batch Adam over all graphs; returns (params, per-epoch loss)."""
    batch = _as_batch(graphs)
    params = init.copy() if init is not None else init_params(batch.x.shape[-1], config.hidden, config.dense, init_seed)
    state = AdamState.zeros(params, lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    history = []
    best = np.inf
    best_params = params
    stale = 0
    for epoch in range(config.epochs):
        value, grads = loss_and_grad(batch, params)
        if not np.isfinite(value) or not grads.all_finite():
            raise DivergenceDetected(epoch, value)
        history.append(value)
        if value < best - config.min_delta:
            best, best_params, stale = value, params, 0
        else:
            stale += 1
            if config.patience is not None and stale >= config.patience:
                log.info("early stop at epoch %d (best loss %.6g)", epoch, best)
                break
        if config.log_every and epoch % config.log_every == 0:
            log.info("epoch %d loss %.6g", epoch, value)
        params, state = adam_step(params, grads, state)
    else:
        value = loss_and_grad(batch, params)[0]
        if np.isfinite(value) and value < best:
            best_params = params
    return best_params, np.asarray(history)
