"""End-to-end SOH estimation: segment discovery, offline training, online
estimation, metrics and the threshold sweep."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import gcn
from .data_io import BatteryDataset
from .errors import DegenerateSeries, NoTrainingCycles, SohGraphError, ValidationError
from .graph import BaseGraphConfig, CycleGraph, augment_graph, build_base_graph
from .matrix_profile import DiscordResult, MatrixProfile, default_exclusion, find_discord, mp_fast, partition_profile
from .segments import SegmentSpec, select_segment
from .series_core import concat_cycles

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    base: BaseGraphConfig = BaseGraphConfig()
    m: int = 100
    train_fraction: float = 0.70
    golden_cycle: int = 2
    exclusion: Optional[int] = None
    normalize: bool = True
    eol_threshold: float = 0.8
    seed: int = 0
    engine: gcn.TrainConfig = gcn.TrainConfig()
    pad_policy: str = "error"
    online_pad_policy: str = "pad_last"
    v_ref: Optional[float] = None  # bypasses discord discovery when set
    standardize: bool = True

    def __post_init__(self):
        if not (0.0 < self.train_fraction < 1.0):
            raise ValidationError("train_fraction must lie strictly between 0 and 1")
        if self.m < 2:
            raise ValidationError("m must be >= 2")
        if self.golden_cycle < 1:
            raise ValidationError("golden_cycle must be a positive cycle index")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        base = BaseGraphConfig(**d.pop("base", {}))
        engine = gcn.TrainConfig(**d.pop("engine", {}))
        return cls(base=base, engine=engine, **d)


@dataclass(frozen=True, eq=False)
class Discovery:
    spec: SegmentSpec
    discord: DiscordResult
    profile: MatrixProfile
    slices: list
    search_len: int


def locate_discord(battery: BatteryDataset, cfg: RunConfig) -> Discovery:
    """Profile the first k cycles and take the discord of the golden cycle."""
    k = cfg.base.k
    early = battery.first(k)
    if cfg.golden_cycle > k or len(early) < 2:
        raise DegenerateSeries(
            f"golden cycle {cfg.golden_cycle} needs at least two profiled cycles within k={k}"
        )
    series = concat_cycles(early)
    exclusion = cfg.exclusion or default_exclusion(cfg.m)
    mp = mp_fast(series, cfg.m, exclusion, normalize=cfg.normalize)
    slices = partition_profile(mp, series)
    pos = series.cycle_indices.index(cfg.golden_cycle)
    golden = early[pos]
    # only window starts whose window lies wholly inside the golden cycle
    search_len = len(golden) - cfg.m + 1
    discord = find_discord(slices[pos], golden, search_len)
    return Discovery(SegmentSpec(discord.v_ref, cfg.m), discord, mp, slices, search_len)


def discover_spec(battery: BatteryDataset, cfg: RunConfig) -> SegmentSpec:
    return locate_discord(battery, cfg).spec


def training_range(battery: BatteryDataset, cfg: RunConfig) -> tuple:
    """(K_tr, EOL): training cycles are k+1..K_tr, online cycles K_tr+1..EOL."""
    eol = battery.eol_cycle(cfg.eol_threshold)
    k = cfg.base.k
    k_tr = k + int(math.ceil(cfg.train_fraction * (eol - k) - 1e-9))
    return k_tr, eol


@dataclass(frozen=True, eq=False)
class Standardizer:
    """Affine maps applied to node features and labels around the GCN.

    Features are centered per column and divided by one global scale, so
    the relative shape of a segment is kept and no column is amplified on
    its own. The adjacency is computed from raw features and is unaffected.
    """

    x_offset: np.ndarray
    x_scale: float = 1.0
    y_offset: float = 0.0
    y_scale: float = 1.0

    @classmethod
    def identity(cls, m: int) -> "Standardizer":
        return cls(np.zeros(m))

    @classmethod
    def fit(cls, graphs: Sequence[CycleGraph]) -> "Standardizer":
        x = np.concatenate([g.x for g in graphs])
        offset = x.mean(axis=0)
        scale = float(np.std(x - offset))
        y = np.concatenate([g.y[~np.isnan(g.y)] for g in graphs])
        y_scale = float(y.std())
        return cls(offset, scale if scale > 0 else 1.0, float(y.mean()), y_scale if y_scale > 0 else 1.0)

    def apply(self, g: CycleGraph) -> CycleGraph:
        return CycleGraph(
            (g.x - self.x_offset) / self.x_scale,
            g.a.copy(),
            (g.y - self.y_offset) / self.y_scale,
            g.node_cycles,
        )

    def unscale(self, yhat):
        return np.asarray(yhat) * self.y_scale + self.y_offset

    def equals(self, other: "Standardizer") -> bool:
        return (
            np.array_equal(self.x_offset, other.x_offset)
            and (self.x_scale, self.y_offset, self.y_scale) == (other.x_scale, other.y_offset, other.y_scale)
        )


@dataclass(eq=False)
class TrainedModel:
    params: gcn.GcnParams
    spec: SegmentSpec
    base: BaseGraphConfig
    engine: gcn.TrainConfig
    seed: int
    final_loss: float
    epochs_run: int
    k_tr: int
    eol: int
    battery_id: str = ""
    scaler: Optional[Standardizer] = None
    checksum: Optional[str] = None

    def __post_init__(self):
        if self.scaler is None:
            self.scaler = Standardizer.identity(self.spec.m)

    def predict(self, graphs) -> np.ndarray:
        """Per-node SOH for each graph, in label units."""
        scaled = [self.scaler.apply(g) for g in graphs]
        return self.scaler.unscale(gcn.predict(scaled, self.params))


@dataclass(eq=False)
class TrainingReport:
    history: np.ndarray
    training_cycles: tuple
    base_cycles: tuple
    spec: SegmentSpec
    k_tr: int
    eol: int


def _base_graph(battery, spec, cfg):
    return build_base_graph(battery.first(cfg.base.k), cfg.base, spec, cfg.pad_policy)


def training_graphs(battery: BatteryDataset, spec: SegmentSpec, cfg: RunConfig) -> tuple:
    k_tr, eol = training_range(battery, cfg)
    if k_tr <= cfg.base.k:
        raise NoTrainingCycles(f"no training cycles between k={cfg.base.k} and K_tr={k_tr}")
    base = _base_graph(battery, spec, cfg)
    graphs = []
    for c in battery.cycles:
        if cfg.base.k < c.index <= k_tr:
            if c.soh is None:
                raise ValidationError(f"training cycle {c.index} has no SOH label")
            graphs.append(augment_graph(base, select_segment(c, spec, cfg.pad_policy), c.soh))
    if not graphs:
        raise NoTrainingCycles(f"battery has no cycles in ({cfg.base.k}, {k_tr}]")
    return base, graphs, k_tr, eol


def run_offline(battery: BatteryDataset, cfg: RunConfig = RunConfig(), spec: Optional[SegmentSpec] = None):
    """Build base and training graphs, train once over all of them."""
    if spec is None:
        spec = SegmentSpec(cfg.v_ref, cfg.m) if cfg.v_ref is not None else discover_spec(battery, cfg)
    base, graphs, k_tr, eol = training_graphs(battery, spec, cfg)
    log.info("training on %d graphs of %d nodes (cycles %d..%d)", len(graphs), base.n_nodes + 1, cfg.base.k + 1, k_tr)
    scaler = Standardizer.fit(graphs) if cfg.standardize else Standardizer.identity(cfg.m)
    scaled = [scaler.apply(g) for g in graphs]
    params, history = gcn.train(scaled, cfg.seed, cfg.engine)
    final = gcn.loss_and_grad(scaled, params)[0]
    model = TrainedModel(
        params, spec, cfg.base, cfg.engine, cfg.seed, final, len(history), k_tr, eol, battery.battery_id, scaler
    )
    report = TrainingReport(
        history, tuple(g.node_cycles[-1] for g in graphs), base.node_cycles, spec, k_tr, eol
    )
    return model, report


# --- online estimation ------------------------------------------------------


@dataclass(frozen=True)
class EstimateRow:
    gamma: int
    measured: float
    estimated: float
    padded: bool = False


@dataclass(eq=False)
class EstimationReport:
    rows: list
    mae: float
    rmse: float
    config: dict = field(default_factory=dict)
    model_ref: dict = field(default_factory=dict)
    skipped: list = field(default_factory=list)

    @property
    def gammas(self) -> list:
        return [r.gamma for r in self.rows]


def metrics(measured, estimated) -> tuple:
    """(MAE, RMSE) over paired measured/estimated SOH values."""
    y = np.asarray(measured, dtype=np.float64)
    yhat = np.asarray(estimated, dtype=np.float64)
    if y.shape != yhat.shape:
        raise ValidationError("measured and estimated lengths differ")
    if y.size == 0:
        return float("nan"), float("nan")
    err = y - yhat
    return float(np.mean(np.abs(err))), float(np.sqrt(np.mean(err * err)))


def report_metrics(rows: Sequence[EstimateRow]) -> tuple:
    rows = [r for r in rows if r.measured is not None and not math.isnan(r.measured)]
    return metrics([r.measured for r in rows], [r.estimated for r in rows])


def online_graphs(battery: BatteryDataset, model: TrainedModel, cfg: RunConfig):
    base_cfg = replace(cfg, base=model.base, pad_policy="error")
    base = _base_graph(battery, model.spec, base_cfg)
    graphs, meta, skipped = [], [], []
    for c in battery.cycles:
        if not (model.k_tr < c.index <= model.eol):
            continue
        try:
            feat = select_segment(c, model.spec, cfg.online_pad_policy)
        except SohGraphError as exc:
            log.warning("skipping online cycle %d: %s", c.index, exc)
            skipped.append({"cycle": c.index, "reason": str(exc)})
            continue
        graphs.append(augment_graph(base, feat))
        meta.append((c.index, c.soh, feat.padded))
    return graphs, meta, skipped


def run_online(model: TrainedModel, battery: BatteryDataset, cfg: RunConfig = RunConfig(), model_ref: Optional[dict] = None) -> EstimationReport:
    """Estimate SOH for every online cycle as the appended node's prediction."""
    graphs, meta, skipped = online_graphs(battery, model, cfg)
    rows = []
    if graphs:
        preds = model.predict(graphs)[:, -1]
        for (gamma, soh, padded), est in zip(meta, preds):
            rows.append(EstimateRow(gamma, float("nan") if soh is None else soh, float(est), padded))
    mae, rmse = report_metrics(rows)
    ref = dict(model_ref or {})
    if model.checksum and "checksum" not in ref:
        ref["checksum"] = model.checksum
    return EstimationReport(rows, mae, rmse, cfg.to_dict(), ref, skipped)


def run(battery: BatteryDataset, cfg: RunConfig = RunConfig(), spec: Optional[SegmentSpec] = None):
    model, training = run_offline(battery, cfg, spec)
    return model, training, run_online(model, battery, cfg)


# --- threshold sweep --------------------------------------------------------


def candidate_grid(v_center: float, count: int = 7, step: float = 0.02) -> list:
    """``count`` thresholds spaced by ``step`` with ``v_center`` in the middle."""
    half = (count - 1) / 2.0
    return [v_center + step * (i - half) for i in range(count)]


@dataclass(frozen=True)
class SweepRow:
    v_ref: float
    rmse: float
    mae: float
    selected: bool
    rank: Optional[int] = None
    error: Optional[str] = None


def sweep_segments(battery: BatteryDataset, cfg: RunConfig, offsets: Optional[Sequence[float]] = None, selected: Optional[float] = None) -> list:
    """Train and evaluate one pipeline per candidate threshold.

    ``selected`` is the discord-derived threshold; it is discovered when not
    given and always included. Rows come back ranked by RMSE, failed
    candidates last with no rank.
    """
    if selected is None:
        selected = discover_spec(battery, cfg).v_ref
    candidates = list(offsets) if offsets is not None else candidate_grid(selected)
    if not any(v == selected for v in candidates):
        candidates.append(selected)
    rows = []
    for v in candidates:
        try:
            spec = SegmentSpec(v, cfg.m)
            _, _, report = run(battery, replace(cfg, v_ref=v), spec)
            rows.append(SweepRow(float(v), report.rmse, report.mae, v == selected))
        except SohGraphError as exc:
            log.warning("candidate %.4f V failed: %s", v, exc)
            rows.append(SweepRow(float(v), float("nan"), float("nan"), v == selected, error=str(exc)))
    ok = sorted((r for r in rows if r.error is None and not math.isnan(r.rmse)), key=lambda r: (r.rmse, r.v_ref))
    failed = [r for r in rows if r not in ok]
    # competition ranking: equal RMSE shares a rank, e.g. thresholds above the
    # first sample all pick the same segment
    ranked = [replace(r, rank=1 + sum(o.rmse < r.rmse for o in ok)) for r in ok]
    return ranked + failed


# --- (de)serialization payloads ---------------------------------------------


def model_to_payload(model: TrainedModel) -> dict:
    from .data_io import encode_array

    return {
        "hyperparameters": {
            "engine": asdict(model.engine),
            "base": asdict(model.base),
            "m": model.spec.m,
        },
        "segment": {"v_ref": model.spec.v_ref, "m": model.spec.m},
        "shapes": {k: list(v) for k, v in model.params.shapes.items()},
        "weights": {k: encode_array(v) for k, v in model.params.items()},
        "seed": model.seed,
        "final_loss": model.final_loss,
        "epochs_run": model.epochs_run,
        "split": {"k_tr": model.k_tr, "eol": model.eol},
        "battery_id": model.battery_id,
        "scaling": {
            "x_offset": encode_array(model.scaler.x_offset),
            "x_scale": model.scaler.x_scale,
            "y_offset": model.scaler.y_offset,
            "y_scale": model.scaler.y_scale,
        },
    }


def model_from_payload(doc: dict) -> TrainedModel:
    from .errors import CorruptArtifact

    try:
        weights = {k: np.asarray(v, dtype=np.float64) for k, v in doc["weights"].items()}
        for k, shape in doc["shapes"].items():
            if list(weights[k].shape) != list(shape):
                raise CorruptArtifact(f"weight {k} has shape {weights[k].shape}, header says {shape}")
        params = gcn.GcnParams(**weights)
        hyper = doc["hyperparameters"]
        spec = SegmentSpec(doc["segment"]["v_ref"], doc["segment"]["m"])
        split = doc["split"]
    except (KeyError, TypeError) as exc:
        raise CorruptArtifact(f"model document is missing {exc}") from exc
    # fields introduced in schema 1.1; older documents default to identity scaling
    epochs_run = doc.get("epochs_run", hyper["engine"].get("epochs", 0))
    battery_id = doc.get("battery_id", "")
    scaling = doc.get("scaling")
    if scaling is None:
        scaler = Standardizer.identity(spec.m)
    else:
        scaler = Standardizer(
            np.asarray(scaling["x_offset"], dtype=np.float64),
            scaling["x_scale"],
            scaling["y_offset"],
            scaling["y_scale"],
        )
    return TrainedModel(
        params,
        spec,
        BaseGraphConfig(**hyper["base"]),
        gcn.TrainConfig(**hyper["engine"]),
        doc["seed"],
        doc["final_loss"],
        epochs_run,
        split["k_tr"],
        split["eol"],
        battery_id,
        scaler,
        doc.get("_checksum"),
    )


def report_to_payload(report: EstimationReport) -> dict:
    return {
        "rows": [asdict(r) for r in report.rows],
        "mae": report.mae,
        "rmse": report.rmse,
        "config": report.config,
        "model_ref": report.model_ref,
        "skipped": report.skipped,
    }


def report_from_payload(doc: dict) -> EstimationReport:
    rows = [EstimateRow(**r) for r in doc["rows"]]
    return EstimationReport(rows, doc["mae"], doc["rmse"], doc.get("config", {}), doc.get("model_ref", {}), doc.get("skipped", []))


def report_csv_text(report: EstimationReport) -> str:
    from .data_io import fmt_float

    lines = ["gamma,measured_soh,estimated_soh,padded"]
    for r in report.rows:
        lines.append(f"{r.gamma},{fmt_float(r.measured)},{fmt_float(r.estimated)},{int(r.padded)}")
    return "\n".join(lines) + "\n"
