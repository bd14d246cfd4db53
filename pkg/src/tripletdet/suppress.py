"""Duplicate suppression and final selection of detections.

All suppression is per class; geometry is never altered and scores only
ever decrease.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass
from itertools import groupby

import numpy as np

from . import _backend
from .errors import ContractError, DegenerateBoxWarning
from .records import Box, Detection


class Method(str, enum.Enum):
    SOFT_GAUSSIAN = "soft-gaussian"
    SOFT_LINEAR = "soft-linear"
    HARD = "hard"


@dataclass(frozen=True)
class SuppressConfig:
    method: Method = Method.SOFT_GAUSSIAN
    sigma: float = 0.5
    iou_threshold: float = 0.6
    score_prune: float = 0.001
    top_n: int = 100

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if self.sigma <= 0:
            raise ContractError(f"sigma must be > 0, got {self.sigma}")
        if not 0 < self.iou_threshold < 1:
            raise ContractError(f"iou_threshold must be in (0, 1), got {self.iou_threshold}")


def iou(a: Box, b: Box) -> float:
    """Intersection over union; 0 for disjoint boxes.

    A zero-area box yields 0 and a :class:`DegenerateBoxWarning`.
    """
    if a.area <= 0 or b.area <= 0:
        warnings.warn(f"degenerate box in IoU: {a if a.area <= 0 else b}", DegenerateBoxWarning, stacklevel=2)
        return 0.0
    iw = min(a.br_x, b.br_x) - max(a.tl_x, b.tl_x)
    ih = min(a.br_y, b.br_y) - max(a.tl_y, b.tl_y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between (N, 4) and (M, 4) xyxy arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    inter = iw * ih
    with np.errstate(divide="ignore", invalid="ignore"):
        out = inter / (area_a[:, None] + area_b[None, :] - inter)
    valid = (iw > 0) & (ih > 0) & (area_a[:, None] > 0) & (area_b[None, :] > 0)
    return np.where(valid, out, 0.0)


def _by_class(dets):
    dets = sorted(dets, key=lambda d: (d.image_id, d.class_id))
    return groupby(dets, key=lambda d: (d.image_id, d.class_id))


def _columns(group):
    arr = np.array([d.box.as_tuple() for d in group], dtype=np.float64).reshape(-1, 4)
    return (np.ascontiguousarray(arr[:, 0]), np.ascontiguousarray(arr[:, 1]),
            np.ascontiguousarray(arr[:, 2]), np.ascontiguousarray(arr[:, 3]))


def _ordered(dets):
    return sorted(dets, key=Detection.sort_key)


def soft_nms(dets, cfg: SuppressConfig = SuppressConfig()) -> list[Detection]:
    """Decay overlapping same-class scores instead of deleting boxes.

    Gaussian: ``s *= exp(-iou**2 / sigma)`` for every remaining box.
    Linear: ``s *= 1 - iou`` when ``iou > iou_threshold``. Boxes whose score
    drops below ``score_prune`` are removed.
    """
    if cfg.method is Method.HARD:
        return hard_nms(dets, cfg)
    method = 0 if cfg.method is Method.SOFT_GAUSSIAN else 1
    out = []
    k = _backend.kernels()
    for _, group in _by_class(dets):
        group = _ordered(group)
        x1, y1, x2, y2 = _columns(group)
        scores = np.array([d.score for d in group], dtype=np.float64)
        order, new = k.soft_nms(x1, y1, x2, y2, scores, method, float(cfg.sigma),
                                float(cfg.iou_threshold), float(cfg.score_prune))
        out.extend(Detection(group[i].image_id, group[i].class_id, group[i].box, float(new[i])) for i in order)
    return _ordered(out)


def hard_nms(dets, cfg: SuppressConfig = SuppressConfig()) -> list[Detection]:
    """Greedy per-class NMS; a box is dropped when its IoU with a kept,
    higher-ranked box reaches ``iou_threshold``."""
    out = []
    k = _backend.kernels()
    for _, group in _by_class(dets):
        group = _ordered(group)
        keep = k.nms(*_columns(group), float(cfg.iou_threshold))
        out.extend(group[i] for i in keep)
    return _ordered(out)


def suppress(dets, cfg: SuppressConfig = SuppressConfig()) -> list[Detection]:
    if cfg.method is Method.HARD:
        return hard_nms(dets, cfg)
    return soft_nms(dets, cfg)


def flip_box(box: Box, image_width: float) -> Box:
    return Box(image_width - box.br_x, box.tl_y, image_width - box.tl_x, box.br_y)


def flip_merge(dets_original, dets_flipped, image_width: float) -> list[Detection]:
    """Mirror detections from a horizontally flipped image back and append them."""
    back = [Detection(d.image_id, d.class_id, flip_box(d.box, image_width), d.score) for d in dets_flipped]
    return list(dets_original) + back


def top_select(dets, top_n: int = 100) -> list[Detection]:
    """Highest ``top_n`` detections by score; ties in row-major geometry order."""
    return _ordered(dets)[:top_n]
