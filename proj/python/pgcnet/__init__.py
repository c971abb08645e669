"""Probabilistic stereo matching with aleatoric and epistemic uncertainty."""

import json as _json

from ._pgcnet import (
    PgcnetError,
    Predictor,
    __version__,
    accuracy_metrics,
    aggregate_passes,
    decode_kitti,
    kl_gaussian,
    read_pfm,
    regression_loss,
    soft_argmin,
    sparsification,
    synth_stereogram,
    write_pfm,
)
from ._pgcnet import build_info as _build_info


def build_info():
    """Compiler and dependency versions of the compiled core."""
    return _json.loads(_build_info())


__all__ = [
    "PgcnetError",
    "Predictor",
    "__version__",
    "accuracy_metrics",
    "aggregate_passes",
    "build_info",
    "decode_kitti",
    "kl_gaussian",
    "read_pfm",
    "regression_loss",
    "soft_argmin",
    "sparsification",
    "synth_stereogram",
    "write_pfm",
]
