"""Layer-wise adversarial robustness for tabular intrusion detection."""

import json

from ._core import (
    AttackError,
    Calibration,
    CalibrationMissingError,
    CheckpointError,
    CorruptFileError,
    DataError,
    Error,
    FeatureMatrix,
    Model,
    NonFiniteError,
    ParseError,
    ShapeError,
    ShapeMismatchError,
    Splits,
    TrainingDivergedError,
    UnsupportedModelError,
    VersionMismatchError,
    calibrate,
    detect,
    early_exit,
    fgsm,
    init_model,
    layer_vulnerability,
    load_checkpoint,
    load_csv,
    pgd,
    save_checkpoint,
    synthetic_splits,
    train,
)
from ._core import run_comparison as _run_comparison


def run_comparison(splits, seeds=(0, 1, 2, 3, 4), epochs=20):
    """Trains the three models per seed and returns the report as a dict."""
    return json.loads(_run_comparison(splits, list(seeds), epochs))


__all__ = [name for name in dir() if not name.startswith("_") and name != "json"]
