"""Battery SOH estimation from matrix-profile selected discharge segments
and a correlation-graph GCN."""

from .data_io import BatteryDataset, SynthConfig, load_battery_csv, synth_battery, write_battery_csv
from .gcn import GcnParams, TrainConfig, forward, predict, train
from .graph import BaseGraphConfig, CycleGraph, augment_graph, build_base_graph, pearson
from .matrix_profile import MatrixProfile, find_discord, mp_brute, mp_fast, partition_profile
from .pipeline import RunConfig, discover_spec, run_offline, run_online, sweep_segments
from .segments import SegmentSpec, select_segment
from .series_core import ConcatSeries, VoltageCycle, concat_cycles

__version__ = "0.1.0"

__all__ = [
    "BatteryDataset",
    "SynthConfig",
    "load_battery_csv",
    "synth_battery",
    "write_battery_csv",
    "GcnParams",
    "TrainConfig",
    "forward",
    "predict",
    "train",
    "BaseGraphConfig",
    "CycleGraph",
    "augment_graph",
    "build_base_graph",
    "pearson",
    "MatrixProfile",
    "find_discord",
    "mp_brute",
    "mp_fast",
    "partition_profile",
    "RunConfig",
    "discover_spec",
    "run_offline",
    "run_online",
    "sweep_segments",
    "SegmentSpec",
    "select_segment",
    "ConcatSeries",
    "VoltageCycle",
    "concat_cycles",
]
