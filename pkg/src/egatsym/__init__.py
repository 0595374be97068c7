"""Symmetry-constraint detection for analog netlists with an edge-featured
graph attention network, written on a small numpy autodiff core."""
from .graph import CircuitGraph, SizeStats, SymmetryGroups, build_graph, enumerate_valid_pairs
from .metrics import EvalReport, evaluate
from .model import ModelConfig, ModelParams, forward, load_checkpoint, save_checkpoint
from .netlist import Device, DeviceKind, Netlist, NetlistError, ParseOptions, emit_netlist, parse_netlist
from .train import TrainConfig, predict, train

__version__ = "0.1.0"

__all__ = [
    "CircuitGraph", "Device", "DeviceKind", "EvalReport", "ModelConfig", "ModelParams", "Netlist",
    "NetlistError", "ParseOptions", "SizeStats", "SymmetryGroups", "TrainConfig", "build_graph",
    "emit_netlist", "enumerate_valid_pairs", "evaluate", "forward", "load_checkpoint", "parse_netlist",
    "predict", "save_checkpoint", "train",
]
