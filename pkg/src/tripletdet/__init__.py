"""Keypoint-triplet object decoding: pooling, peak extraction, corner pairing
with center confirmation, suppression, losses, a synthetic oracle and a
COCO-style evaluator."""

from __future__ import annotations

from ._backend import active_backend, use_backend
from .decode import DecodeConfig, central_region, decode_mr, decode_sr
from .grid import DenseGrid
from .metrics import EvalReport, evaluate
from .records import Box, Detection, GroundTruth, Keypoint, LevelSpec
from .suppress import SuppressConfig, suppress
from .synth import SceneSpec, generate_dataset, generate_scene

__version__ = "0.1.0"

__all__ = [
    "Box",
    "DecodeConfig",
    "DenseGrid",
    "Detection",
    "EvalReport",
    "GroundTruth",
    "Keypoint",
    "LevelSpec",
    "SceneSpec",
    "SuppressConfig",
    "active_backend",
    "central_region",
    "decode_mr",
    "decode_sr",
    "evaluate",
    "generate_dataset",
    "generate_scene",
    "suppress",
    "use_backend",
]
