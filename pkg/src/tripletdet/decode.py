"""Keypoint-triplet decoding.

Corner keypoints are paired into candidate boxes; a candidate survives only
when a same-class center keypoint falls inside its scale-aware central
region. Two pipelines are provided:

* :func:`decode_sr` works from one set of heatmaps (corner pairing by
  embedding distance, one confirming center).
* :func:`decode_mr` works from per-level sub-box regressions that are
  snapped onto the heatmap peaks; every candidate carries two predicted
  centers and both must confirm it.
"""

from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional

import numpy as np

from . import _backend
from .errors import ConfigError, ContractError
from .grid import DenseGrid
from .keypoints import PeakConfig, offset_coords, peak_arrays, refine_arrays
from .records import Box, CandidateBox, Detection, Keypoint, LevelSpec

# names of the grids a decoder reads
SR_GRIDS = ("tl_heat", "br_heat", "ct_heat", "tl_embed", "br_embed", "tl_off", "br_off", "ct_off")
MR_SHARED_GRIDS = ("tl_heat", "br_heat", "ct_heat", "tl_off", "br_off", "ct_off")
MR_LEVEL_GRIDS = ("tl_cls", "br_cls", "tl_reg", "br_reg")


@dataclass(frozen=True)
class DecodeConfig:
    k_peaks: int = 70
    embed_threshold: float = 0.5
    n_small: int = 3
    n_large: int = 5
    scale_split: float = 150.0
    snap_radius_factor: float = 2.0
    k_per_level: int = 70
    require_both_centers: bool = True
    center_filter: bool = True
    refine: bool = True
    pair_per_level: bool = False
    max_candidates: int = 1000
    peak_window: int = 3
    score_floor: float = 0.0

    def __post_init__(self):
        for name in ("n_small", "n_large"):
            n = getattr(self, name)
            if n < 1 or n % 2 == 0:
                raise ContractError(f"DecodeConfig.{name} must be odd and >= 1, got {n}")
        if self.scale_split <= 0:
            raise ContractError(f"DecodeConfig.scale_split must be > 0, got {self.scale_split}")

    @property
    def peaks(self) -> PeakConfig:
        return PeakConfig(self.k_peaks, self.peak_window, self.score_floor)

    def with_(self, **kw) -> "DecodeConfig":
        return replace(self, **kw)


@dataclass(frozen=True)
class CentralRegion:
    ctl_x: float
    ctl_y: float
    cbr_x: float
    cbr_y: float

    def contains(self, x: float, y: float) -> bool:
        return self.ctl_x <= x <= self.cbr_x and self.ctl_y <= y <= self.cbr_y

    @property
    def width(self) -> float:
        return self.cbr_x - self.ctl_x

    @property
    def height(self) -> float:
        return self.cbr_y - self.ctl_y


def central_region(box: Box, n: int) -> CentralRegion:
    """Inner box whose sides are ``1/n`` of the box's, sharing its center."""
    if not isinstance(n, (int, np.integer)) or n < 1 or n % 2 == 0:
        raise ContractError(f"central region scale must be an odd positive integer, got {n!r}")
    two_n = 2.0 * n
    return CentralRegion(
        ((n + 1) * box.tl_x + (n - 1) * box.br_x) / two_n,
        ((n + 1) * box.tl_y + (n - 1) * box.br_y) / two_n,
        ((n - 1) * box.tl_x + (n + 1) * box.br_x) / two_n,
        ((n - 1) * box.tl_y + (n + 1) * box.br_y) / two_n,
    )


def select_n(box: Box, cfg: DecodeConfig = DecodeConfig()) -> int:
    """``n_small`` when the longer side is below ``scale_split``, else ``n_large``."""
    return cfg.n_small if max(box.width, box.height) < cfg.scale_split else cfg.n_large


class StageTimer:
    """Accumulates wall time per decode stage."""

    def __init__(self):
        self.totals: dict[str, float] = {}

    @contextmanager
    def stage(self, name):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.totals[name] = self.totals.get(name, 0.0) + time.perf_counter() - t0


@contextmanager
def _maybe(timer, name):
    if timer is None:
        yield
    else:
        with timer.stage(name):
            yield


# -- keypoint tables -------------------------------------------------------


@dataclass
class _Points:
    """Column-wise keypoints in image coordinates."""

    cls: np.ndarray
    x: np.ndarray
    y: np.ndarray
    score: np.ndarray
    index: np.ndarray
    emb: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.x)

    @classmethod
    def from_keypoints(cls, kps) -> "_Points":
        kps = list(kps)
        emb = None
        if kps and all(k.embedding is not None for k in kps):
            emb = np.array([k.embedding for k in kps], dtype=np.float64)
        return cls(
            np.array([k.class_id for k in kps], dtype=np.int64),
            np.array([k.x for k in kps], dtype=np.float64),
            np.array([k.y for k in kps], dtype=np.float64),
            np.array([k.score for k in kps], dtype=np.float64),
            np.array([k.index for k in kps], dtype=np.int64),
            emb,
        )

    def keypoint(self, k: int) -> Keypoint:
        e = None if self.emb is None else float(self.emb[k])
        return Keypoint(int(self.cls[k]), float(self.x[k]), float(self.y[k]), float(self.score[k]), e, int(self.index[k]))


def _heat_points(heat, offsets, stride, pcfg, embed=None) -> _Points:
    p = peak_arrays(heat, pcfg)
    x, y = offset_coords(p.row, p.col, offsets, stride)
    emb = None
    if embed is not None:
        arr = embed.array if isinstance(embed, DenseGrid) else np.asarray(embed)
        emb = arr[0, p.row, p.col].astype(np.float64)
    return _Points(p.cls, x, y, p.score, p.index, emb)


# -- single resolution -----------------------------------------------------


def _candidate_order(score, cls, a, b, cap):
    order = np.lexsort((b, a, cls, -score))
    return order[:cap]


def _pair_tables(tl: _Points, br: _Points, cfg: DecodeConfig, use_embedding: bool):
    k = _backend.kernels()
    if use_embedding and (tl.emb is None or br.emb is None):
        raise ContractError("corner pairing needs embeddings on every keypoint")
    empty = np.zeros(0, dtype=np.float64)
    ti, bi = k.pair_corners(
        tl.cls, tl.x, tl.y, tl.emb if use_embedding else empty,
        br.cls, br.x, br.y, br.emb if use_embedding else empty,
        float(cfg.embed_threshold), bool(use_embedding),
    )
    score = (tl.score[ti] + br.score[bi]) / 2.0
    order = _candidate_order(score, tl.cls[ti], ti, bi, cfg.max_candidates)
    return ti[order], bi[order], score[order]


def pair_corners(tl_peaks, br_peaks, cfg: DecodeConfig = DecodeConfig()) -> list[CandidateBox]:
    """All same-class, correctly ordered corner pairs whose embeddings agree.

    Candidates score the mean of their two corners and come out sorted by
    score (ties: class, then input positions), capped at
    ``cfg.max_candidates``.
    """
    tl, br = _Points.from_keypoints(tl_peaks), _Points.from_keypoints(br_peaks)
    if len(tl) == 0 or len(br) == 0:
        return []
    ti, bi, score = _pair_tables(tl, br, cfg, use_embedding=True)
    return [
        CandidateBox(int(tl.cls[a]), Box(tl.x[a], tl.y[a], br.x[b], br.y[b]), float(s), tl_peaks[a], br_peaks[b])
        for a, b, s in zip(ti, bi, score)
    ]


def _box_columns(cands):
    x1 = np.array([c.box.tl_x for c in cands], dtype=np.float64)
    y1 = np.array([c.box.tl_y for c in cands], dtype=np.float64)
    x2 = np.array([c.box.br_x for c in cands], dtype=np.float64)
    y2 = np.array([c.box.br_y for c in cands], dtype=np.float64)
    return x1, y1, x2, y2


def center_filter_sr(cands, center_peaks, cfg: DecodeConfig = DecodeConfig()) -> list[CandidateBox]:
    """Keep candidates whose central region holds a same-class center keypoint.

    The survivor's score becomes the mean of its two corners and the
    highest-scoring qualifying center.
    """
    cands = list(cands)
    if not cands:
        return []
    ct = _Points.from_keypoints(center_peaks)
    x1, y1, x2, y2 = _box_columns(cands)
    cls = np.array([c.class_id for c in cands], dtype=np.int64)
    best = _backend.kernels().best_center(
        x1, y1, x2, y2, cls, ct.cls, ct.x, ct.y, ct.score, cfg.n_small, cfg.n_large, float(cfg.scale_split)
    )
    out = []
    for c, k in zip(cands, best):
        if k < 0:
            continue
        center = center_peaks[int(k)]
        score = (c.tl_source.score + c.br_source.score + center.score) / 3.0
        out.append(CandidateBox(c.class_id, c.box, score, c.tl_source, c.br_source, (center,)))
    return out


def _require(grids: Mapping, names, what):
    missing = [n for n in names if n not in grids]
    if missing:
        raise ConfigError(f"{what}: missing grid(s) {', '.join(missing)}")


def _sorted_detections(image_id, cls, x1, y1, x2, y2, score) -> list[Detection]:
    order = np.lexsort((x2, y2, x1, y1, cls, -score))
    return [
        Detection(image_id, int(cls[k]), Box(float(x1[k]), float(y1[k]), float(x2[k]), float(y2[k])), float(score[k]))
        for k in order
    ]


def decode_sr(grids: Mapping[str, DenseGrid], stride: float, cfg: DecodeConfig = DecodeConfig(),
              image_id: int = 0, timer: Optional[StageTimer] = None) -> list[Detection]:
    """Single-resolution decode: peaks -> offsets -> pairing -> center check."""
    _require(grids, SR_GRIDS, "decode_sr")
    pcfg = cfg.peaks
    with _maybe(timer, "peaks"):
        tl = _heat_points(grids["tl_heat"], grids["tl_off"], stride, pcfg, grids["tl_embed"])
        br = _heat_points(grids["br_heat"], grids["br_off"], stride, pcfg, grids["br_embed"])
        ct = _heat_points(grids["ct_heat"], grids["ct_off"], stride, pcfg) if cfg.center_filter else None
    with _maybe(timer, "pairing"):
        if len(tl) == 0 or len(br) == 0:
            return []
        ti, bi, score = _pair_tables(tl, br, cfg, use_embedding=True)
        cls = tl.cls[ti]
        x1, y1, x2, y2 = tl.x[ti], tl.y[ti], br.x[bi], br.y[bi]
    if cfg.center_filter:
        with _maybe(timer, "filter"):
            best = _backend.kernels().best_center(
                x1, y1, x2, y2, cls, ct.cls, ct.x, ct.y, ct.score, cfg.n_small, cfg.n_large, float(cfg.scale_split)
            )
            keep = best >= 0
            score = (tl.score[ti] + br.score[bi] + ct.score[np.where(keep, best, 0)]) / 3.0 if len(ct) else score
            cls, x1, y1, x2, y2, score = (a[keep] for a in (cls, x1, y1, x2, y2, score))
    return _sorted_detections(image_id, cls, x1, y1, x2, y2, score)


# -- multi resolution ------------------------------------------------------


@dataclass(frozen=True)
class SubBoxPrediction:
    """One feature point's regression for one branch ("tl" or "br")."""

    level: LevelSpec
    point: tuple[float, float]
    class_id: int
    cls_score: float
    corner_vector: tuple[float, float]
    center_vector: tuple[float, float]
    branch: str

    def corner(self) -> Keypoint:
        return Keypoint(self.class_id, self.point[0] + self.corner_vector[0],
                        self.point[1] + self.corner_vector[1], self.cls_score)

    def center(self) -> Keypoint:
        return Keypoint(self.class_id, self.point[0] + self.center_vector[0],
                        self.point[1] + self.center_vector[1], self.cls_score)


@dataclass(frozen=True)
class RefinedSubBox:
    """A branch prediction after its corner and center were snapped to peaks."""

    corner: Keypoint
    center: Keypoint
    branch: str
    level_id: str = ""


def feature_point(row: int, col: int, stride: int) -> tuple[float, float]:
    """Image location of a level cell: its center, ``((j + 0.5) s, (i + 0.5) s)``."""
    return ((col + 0.5) * stride, (row + 0.5) * stride)


@dataclass
class _Branch:
    """Column-wise refined predictions of one branch."""

    cls: np.ndarray
    x: np.ndarray
    y: np.ndarray
    score: np.ndarray
    cx: np.ndarray
    cy: np.ndarray
    cscore: np.ndarray
    level: np.ndarray  # position of the originating level

    def __len__(self):
        return len(self.x)

    def take(self, idx) -> "_Branch":
        return _Branch(*(getattr(self, f)[idx] for f in ("cls", "x", "y", "score", "cx", "cy", "cscore", "level")))

    @classmethod
    def concat(cls, parts) -> "_Branch":
        parts = list(parts)
        if not parts:
            e = np.zeros(0)
            ei = np.zeros(0, dtype=np.int64)
            return cls(ei, e, e, e, e, e, e, ei)
        return cls(*(np.concatenate([getattr(p, f) for p in parts])
                     for f in ("cls", "x", "y", "score", "cx", "cy", "cscore", "level")))

    def dedupe(self) -> "_Branch":
        # coincident predictions (same class, corner and center) collapse to the best-scored one
        if len(self) == 0:
            return self
        key = np.stack([self.cls.astype(np.float64), np.round(self.x, 3), np.round(self.y, 3),
                        np.round(self.cx, 3), np.round(self.cy, 3)], axis=1)
        order = np.lexsort((np.arange(len(self)), -self.score))
        _, first = np.unique(key[order], axis=0, return_index=True)
        return self.take(np.sort(order[first]))

    def refined(self, k: int, branch: str, level_ids) -> RefinedSubBox:
        c = int(self.cls[k])
        return RefinedSubBox(
            Keypoint(c, float(self.x[k]), float(self.y[k]), float(self.score[k])),
            Keypoint(c, float(self.cx[k]), float(self.cy[k]), float(self.cscore[k])),
            branch,
            level_ids[int(self.level[k])] if level_ids else "",
        )


def select_feature_points(cls_grid, k: int, floor: float = 0.0):
    """Top-``k`` (class, row, col) entries of a classification grid above ``floor``.

    Order: score desc, class asc, row-major asc.
    """
    arr = cls_grid.array if isinstance(cls_grid, DenseGrid) else np.asarray(cls_grid)
    c, i, j = np.nonzero(arr > floor)
    s = arr[c, i, j].astype(np.float64)
    order = np.lexsort((i * arr.shape[2] + j, c, -s))[:k]
    return c[order].astype(np.int64), i[order].astype(np.int64), j[order].astype(np.int64), s[order]


def level_predictions(level: LevelSpec, cls_grid, reg_grid, branch: str, k: int, floor: float = 0.0):
    """Materialize the top-``k`` feature points of one level and branch as predictions."""
    c, i, j, s = select_feature_points(cls_grid, k, floor)
    reg = reg_grid.array if isinstance(reg_grid, DenseGrid) else np.asarray(reg_grid)
    out = []
    for cc, ii, jj, ss in zip(c, i, j, s):
        v = reg[:, ii, jj].astype(np.float64)
        out.append(SubBoxPrediction(level, feature_point(ii, jj, level.stride), int(cc), float(ss),
                                    (v[0], v[1]), (v[2], v[3]), branch))
    return out


def _level_branch(level_pos, level, cls_grid, reg_grid, corner_pts, center_pts, cfg) -> _Branch:
    c, i, j, s = select_feature_points(cls_grid, cfg.k_per_level, cfg.score_floor)
    reg = reg_grid.array if isinstance(reg_grid, DenseGrid) else np.asarray(reg_grid)
    px = (j + 0.5) * level.stride
    py = (i + 0.5) * level.stride
    v = reg[:, i, j].astype(np.float64)
    x, y = px + v[0], py + v[1]
    cx, cy = px + v[2], py + v[3]
    cs = s.copy()
    if cfg.refine:
        radius = cfg.snap_radius_factor * level.stride
        x, y, s, _ = refine_arrays(c, x, y, s, corner_pts.cls, corner_pts.x, corner_pts.y,
                                   corner_pts.score, corner_pts.index, radius)
        cx, cy, cs, _ = refine_arrays(c, cx, cy, cs, center_pts.cls, center_pts.x, center_pts.y,
                                      center_pts.score, center_pts.index, radius)
    return _Branch(c, x, y, s, cx, cy, cs, np.full(len(c), level_pos, dtype=np.int64))


def _pair_branches(tl: _Branch, br: _Branch, cfg: DecodeConfig):
    k = _backend.kernels()
    empty = np.zeros(0, dtype=np.float64)
    ti, bi = k.pair_corners(tl.cls, tl.x, tl.y, empty, br.cls, br.x, br.y, empty, 0.0, False)
    if cfg.pair_per_level:
        same = tl.level[ti] == br.level[bi]
        ti, bi = ti[same], bi[same]
    score = (tl.score[ti] + br.score[bi]) / 2.0
    order = _candidate_order(score, tl.cls[ti], ti, bi, cfg.max_candidates)
    return ti[order], bi[order], score[order]


def pair_subboxes(tl_preds, br_preds, cfg: DecodeConfig = DecodeConfig()) -> list[CandidateBox]:
    """Pair refined top-left and bottom-right branch predictions into boxes.

    Any same-class pair whose top-left point lies above and left of the
    bottom-right point is valid, across pyramid levels unless
    ``cfg.pair_per_level``. Each candidate records both branches' centers.
    """
    tl_preds, br_preds = list(tl_preds), list(br_preds)
    if not tl_preds or not br_preds:
        return []
    levels = {lid: n for n, lid in enumerate(dict.fromkeys(p.level_id for p in tl_preds + br_preds))}
    tl, br = _refined_table(tl_preds, levels), _refined_table(br_preds, levels)
    ti, bi, score = _pair_branches(tl, br, cfg)
    return [
        CandidateBox(tl_preds[a].corner.class_id,
                     Box(tl_preds[a].corner.x, tl_preds[a].corner.y, br_preds[b].corner.x, br_preds[b].corner.y),
                     float(s), tl_preds[a].corner, br_preds[b].corner,
                     (tl_preds[a].center, br_preds[b].center))
        for a, b, s in zip(ti, bi, score)
    ]


def _refined_table(preds, levels: dict) -> _Branch:
    f = lambda get, dt=np.float64: np.array([get(p) for p in preds], dtype=dt)  # noqa: E731
    return _Branch(
        f(lambda p: p.corner.class_id, np.int64), f(lambda p: p.corner.x), f(lambda p: p.corner.y),
        f(lambda p: p.corner.score), f(lambda p: p.center.x), f(lambda p: p.center.y),
        f(lambda p: p.center.score), f(lambda p: levels[p.level_id], np.int64),
    )


def center_filter_mr(cands, cfg: DecodeConfig = DecodeConfig()) -> list[CandidateBox]:
    """Keep candidates whose central region holds both branch centers.

    Survivors score the mean of the four keypoints (two corners, two
    centers). With ``require_both_centers`` off, one confirming center is
    enough and the score averages the corners with the confirming centers.
    """
    cands = list(cands)
    if not cands:
        return []
    for c in cands:
        if len(c.center_sources) != 2:
            raise ContractError("multi-resolution candidates must carry exactly two centers")
    x1, y1, x2, y2 = _box_columns(cands)
    k = _backend.kernels()
    inside = []
    for slot in (0, 1):
        px = np.array([c.center_sources[slot].x for c in cands], dtype=np.float64)
        py = np.array([c.center_sources[slot].y for c in cands], dtype=np.float64)
        same = np.array([c.center_sources[slot].class_id == c.class_id for c in cands])
        inside.append(k.region_contains(x1, y1, x2, y2, px, py, cfg.n_small, cfg.n_large,
                                        float(cfg.scale_split)) & same)
    out = []
    for n, c in enumerate(cands):
        hits = [c.center_sources[s] for s in (0, 1) if inside[s][n]]
        if len(hits) < (2 if cfg.require_both_centers else 1):
            continue
        scores = [c.tl_source.score, c.br_source.score] + [h.score for h in hits]
        out.append(CandidateBox(c.class_id, c.box, sum(scores) / len(scores), c.tl_source, c.br_source, tuple(hits)))
    return out


def decode_mr(grids: Mapping[str, DenseGrid], level_grids: Mapping[str, Mapping[str, DenseGrid]],
              levels, stride: float, cfg: DecodeConfig = DecodeConfig(), image_id: int = 0,
              timer: Optional[StageTimer] = None) -> list[Detection]:
    """Multi-resolution decode.

    ``grids`` holds the shared corner/center heatmaps and offsets rendered at
    ``stride``; ``level_grids[level_id]`` holds that level's classification
    and regression grids.
    """
    levels = list(levels)
    _require(grids, MR_SHARED_GRIDS, "decode_mr")
    if set(level_grids) != {lv.level_id for lv in levels}:
        raise ConfigError(
            f"decode_mr: level grids {sorted(level_grids)} do not match levels {[lv.level_id for lv in levels]}"
        )
    for lv in levels:
        _require(level_grids[lv.level_id], MR_LEVEL_GRIDS, f"decode_mr level {lv.level_id}")
    pcfg = cfg.peaks
    with _maybe(timer, "peaks"):
        tl_pts = _heat_points(grids["tl_heat"], grids["tl_off"], stride, pcfg)
        br_pts = _heat_points(grids["br_heat"], grids["br_off"], stride, pcfg)
        ct_pts = _heat_points(grids["ct_heat"], grids["ct_off"], stride, pcfg)
        tl_parts, br_parts = [], []
        for pos, lv in enumerate(levels):
            g = level_grids[lv.level_id]
            tl_parts.append(_level_branch(pos, lv, g["tl_cls"], g["tl_reg"], tl_pts, ct_pts, cfg))
            br_parts.append(_level_branch(pos, lv, g["br_cls"], g["br_reg"], br_pts, ct_pts, cfg))
        tl = _Branch.concat(tl_parts).dedupe() if not cfg.pair_per_level else _Branch.concat(
            p.dedupe() for p in tl_parts)
        br = _Branch.concat(br_parts).dedupe() if not cfg.pair_per_level else _Branch.concat(
            p.dedupe() for p in br_parts)
    with _maybe(timer, "pairing"):
        if len(tl) == 0 or len(br) == 0:
            return []
        ti, bi, score = _pair_branches(tl, br, cfg)
        cls = tl.cls[ti]
        x1, y1, x2, y2 = tl.x[ti], tl.y[ti], br.x[bi], br.y[bi]
    if cfg.center_filter:
        with _maybe(timer, "filter"):
            k = _backend.kernels()
            a = k.region_contains(x1, y1, x2, y2, tl.cx[ti], tl.cy[ti], cfg.n_small, cfg.n_large, float(cfg.scale_split))
            b = k.region_contains(x1, y1, x2, y2, br.cx[bi], br.cy[bi], cfg.n_small, cfg.n_large, float(cfg.scale_split))
            if cfg.require_both_centers:
                keep = a & b
                score = (tl.score[ti] + br.score[bi] + tl.cscore[ti] + br.cscore[bi]) / 4.0
            else:
                keep = a | b
                total = tl.score[ti] + br.score[bi] + np.where(a, tl.cscore[ti], 0.0) + np.where(b, br.cscore[bi], 0.0)
                score = total / (2.0 + a.astype(np.float64) + b.astype(np.float64))
            cls, x1, y1, x2, y2, score = (v[keep] for v in (cls, x1, y1, x2, y2, score))
    return _sorted_detections(image_id, cls, x1, y1, x2, y2, score)
