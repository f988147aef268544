"""EnergyFormer hyperspectral classifier."""

import json

from ._core import (
    Error,
    EvalReport,
    FormatError,
    IoError,
    Model,
    NumericError,
    UsageError,
    attention_energy,
    compute_metrics,
    default_config,
    dominant_frequencies,
    floor_frequency,
    hopfield_energy,
    normalize,
    read_cube,
    read_labels,
    stratified_split,
    synthesize,
    write_cube,
    write_labels,
)
from ._core import run_experiment as _run_experiment

__all__ = [
    "Error",
    "EvalReport",
    "FormatError",
    "IoError",
    "Model",
    "NumericError",
    "UsageError",
    "attention_energy",
    "compute_metrics",
    "default_config",
    "dominant_frequencies",
    "floor_frequency",
    "hopfield_energy",
    "normalize",
    "read_cube",
    "read_labels",
    "run_experiment",
    "stratified_split",
    "synthesize",
    "write_cube",
    "write_labels",
]


def run_experiment(cube, labels, config=None, **overrides):
    """Train and evaluate on one split. `config` is a dict of config keys; keyword overrides win."""
    merged = dict(config or {})
    merged.update(overrides)
    return _run_experiment(cube, labels, json.dumps(merged))
