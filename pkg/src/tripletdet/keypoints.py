"""Peak extraction, offset remapping and regression-to-peak refinement."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import ContractError
from .grid import DenseGrid
from .records import Keypoint


@dataclass(frozen=True)
class PeakConfig:
    k: int = 70
    window: int = 3
    score_floor: float = 0.0

    def __post_init__(self):
        if self.k < 1:
            raise ContractError(f"PeakConfig.k must be >= 1, got {self.k}")
        if self.window < 1 or self.window % 2 == 0:
            raise ContractError(f"PeakConfig.window must be odd and >= 1, got {self.window}")


@dataclass
class PeakArrays:
    """Column-wise peaks, already in output order."""

    cls: np.ndarray  # int64
    row: np.ndarray  # int64
    col: np.ndarray  # int64
    score: np.ndarray  # float64
    width: int

    def __len__(self):
        return len(self.score)

    @property
    def index(self) -> np.ndarray:
        return self.row * self.width + self.col


def _heat_array(heatmap) -> np.ndarray:
    arr = heatmap.array if isinstance(heatmap, DenseGrid) else np.asarray(heatmap, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[None]
    return np.ascontiguousarray(arr, dtype=np.float32)


def peak_arrays(heatmap, cfg: PeakConfig = PeakConfig()) -> PeakArrays:
    heat = _heat_array(heatmap)
    C, H, W = heat.shape
    if heat.size == 0:
        e = np.zeros(0, dtype=np.int64)
        return PeakArrays(e, e, e, np.zeros(0), W)
    mask = _backend.kernels().peak_mask(heat, cfg.window, float(cfg.score_floor))
    c, i, j = np.nonzero(mask)
    score = heat[c, i, j].astype(np.float64)
    flat = i * W + j
    order = np.lexsort((flat, c, -score))[: cfg.k]
    return PeakArrays(
        c[order].astype(np.int64), i[order].astype(np.int64), j[order].astype(np.int64), score[order], W
    )


def extract_peaks(heatmap, cfg: PeakConfig = PeakConfig()) -> list[Keypoint]:
    """Top-``k`` local maxima of a C-class heatmap, in cell coordinates.

    A cell is a peak when its score exceeds ``score_floor`` and is >= every
    value in its ``window x window`` neighbourhood of the same channel;
    among equal neighbours only the row-major-first cell survives. Results
    are ordered by (score desc, class asc, row-major asc).
    """
    p = peak_arrays(heatmap, cfg)
    idx = p.index
    return [
        Keypoint(int(p.cls[k]), float(p.col[k]), float(p.row[k]), float(p.score[k]), None, int(idx[k]))
        for k in range(len(p))
    ]


def offset_coords(rows, cols, offsets, stride):
    """Image coordinates ``((j + dx) * stride, (i + dy) * stride)`` for arrays of cells."""
    off = offsets.array if isinstance(offsets, DenseGrid) else np.asarray(offsets)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    dx = off[0, rows, cols].astype(np.float64)
    dy = off[1, rows, cols].astype(np.float64)
    return (cols + dx) * stride, (rows + dy) * stride


def apply_offsets(peaks, offsets, stride) -> list[Keypoint]:
    """Remap cell-coordinate peaks to image pixels using a 2-channel offset grid."""
    off = offsets.array if isinstance(offsets, DenseGrid) else np.asarray(offsets)
    if off.ndim != 3 or off.shape[0] != 2:
        raise ContractError(f"offset grid must have shape (2, H, W), got {off.shape}")
    out = []
    for p in peaks:
        i, j = int(p.y), int(p.x)
        if not (0 <= i < off.shape[1] and 0 <= j < off.shape[2]):
            raise ContractError(f"peak cell ({i}, {j}) outside offset grid {off.shape[1:]}")
        x = (j + float(off[0, i, j])) * stride
        y = (i + float(off[1, i, j])) * stride
        out.append(Keypoint(p.class_id, x, y, p.score, p.embedding, p.index))
    return out


def refine_keypoint(regressed: Keypoint, peaks, radius: float) -> Keypoint:
    """Snap a regressed point to the nearest same-class peak within ``radius``.

    Ties go to the smaller row-major heatmap index. With no peak in reach the
    regressed point comes back unchanged, keeping its own score.
    """
    best = None
    best_key = None
    for p in peaks:
        if p.class_id != regressed.class_id:
            continue
        d = float(np.hypot(p.x - regressed.x, p.y - regressed.y))
        if d > radius:
            continue
        key = (d, p.index)
        if best_key is None or key < best_key:
            best, best_key = p, key
    return regressed if best is None else best


def refine_arrays(cls, x, y, score, peak_cls, peak_x, peak_y, peak_score, peak_index, radius):
    """Vectorized :func:`refine_keypoint`.

    Returns ``(x, y, score, snapped)`` where ``snapped`` flags points that
    moved onto a peak. ``radius`` may be a scalar or per-point array.
    """
    n = len(x)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    score = np.asarray(score, dtype=np.float64)
    if n == 0 or len(peak_x) == 0:
        return x.copy(), y.copy(), score.copy(), np.zeros(n, dtype=bool)
    dist = np.hypot(peak_x[None, :] - x[:, None], peak_y[None, :] - y[:, None])
    radius = np.broadcast_to(np.asarray(radius, dtype=np.float64), (n,))
    ok = (np.asarray(cls)[:, None] == np.asarray(peak_cls)[None, :]) & (dist <= radius[:, None])
    dist = np.where(ok, dist, np.inf)
    # order peaks by row-major index so argmin's first-hit rule breaks distance ties
    by_index = np.argsort(peak_index, kind="stable")
    pick = by_index[np.argmin(dist[:, by_index], axis=1)]
    snapped = ok.any(axis=1)
    rx = np.where(snapped, peak_x[pick], x)
    ry = np.where(snapped, peak_y[pick], y)
    rs = np.where(snapped, peak_score[pick], score)
    return rx, ry, rs, snapped
