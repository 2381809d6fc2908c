"""Segment-level generative watch-time modelling.

A video is cut into segments; the model predicts, for each segment, the
probability that a viewer who reached the previous segment keeps watching,
and aggregates those into an expected watch time.  Everything runs on a
small numpy reverse-mode autograd engine (:mod:`vgen.numerics`).
"""

from .data import InteractionRecord, SynthConfig, TrainingExample, build_examples, synth_generate, time_split
from .decoder import CHAIN, RECURSIVE, DecoderParams, SegmentCurve
from .errors import (
    CompatibilityError,
    ConfigError,
    DataError,
    DegenerateFitError,
    DimensionError,
    DomainError,
    IngestionError,
    NumericError,
    VgenError,
)
from .metrics import EvalConfig, EvalReport, mae, xauc
from .numerics import ParameterStore, Tensor, backward, grad_check
from .training import Checkpoint, TrainConfig, evaluate, predict, train

__version__ = "0.1.0"

__all__ = [
    "CHAIN",
    "RECURSIVE",
    "Checkpoint",
    "CompatibilityError",
    "ConfigError",
    "DataError",
    "DecoderParams",
    "DegenerateFitError",
    "DimensionError",
    "DomainError",
    "EvalConfig",
    "EvalReport",
    "IngestionError",
    "InteractionRecord",
    "NumericError",
    "ParameterStore",
    "SegmentCurve",
    "SynthConfig",
    "Tensor",
    "TrainConfig",
    "TrainingExample",
    "VgenError",
    "backward",
    "build_examples",
    "evaluate",
    "grad_check",
    "mae",
    "predict",
    "synth_generate",
    "time_split",
    "train",
    "xauc",
]
