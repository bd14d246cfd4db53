"""COCO-style AP/AR, average false-discovery (AF) rate and geometry-binned recall.

Matching follows the COCO protocol: detections are visited in score order
and each takes the unmatched ground truth with the highest IoU at or above
the threshold (ties go to the lower ground-truth index). Ground truth
outside an evaluated area range is *ignored*: detections matched to it are
dropped from the precision count, as are unmatched detections outside the
range. AP is the 101-point interpolated area under the precision envelope,
averaged over classes that have ground truth.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .records import Box, Detection, GroundTruth
from .suppress import iou_matrix

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))  # 0.50 .. 0.95
LOW_IOU_THRESHOLDS = tuple(round(0.05 + 0.05 * k, 2) for k in range(10))  # 0.05 .. 0.50
RECALL_POINTS = np.linspace(0.0, 1.0, 101)

AREA_RANGES = {
    "all": (0.0, math.inf),
    "small": (0.0, 32.0**2),
    "medium": (32.0**2, 96.0**2),
    "large": (96.0**2, math.inf),
}
# (lo, hi] in pixels^2
GEOMETRY_AREA_BINS = {
    "AR_1+": (96.0**2, 200.0**2),
    "AR_2+": (200.0**2, 300.0**2),
    "AR_3+": (300.0**2, 400.0**2),
    "AR_4+": (400.0**2, math.inf),
}
# [lo, hi) on max(w, h) / min(w, h)
GEOMETRY_ASPECT_BINS = {
    "AR_5:1": (5.0, 6.0),
    "AR_6:1": (6.0, 7.0),
    "AR_7:1": (7.0, 8.0),
    "AR_8:1": (8.0, math.inf),
}


def _in_area(area, rng):
    # COCO treats both area bounds as inclusive
    return rng[0] <= area <= rng[1]


def aspect_ratio(box: Box) -> float:
    lo, hi = sorted((box.width, box.height))
    return math.inf if lo <= 0 else hi / lo


@dataclass
class MatchResult:
    """Outcome of matching one image's detections at one IoU threshold."""

    det_gt: list[int]  # matched ground-truth index per detection, -1 if none
    det_iou: list[float]
    det_score: list[float]
    det_ignored: list[bool]
    gt_matched: list[bool]

    @property
    def true_positives(self) -> int:
        return sum(1 for g, ig in zip(self.det_gt, self.det_ignored) if g >= 0 and not ig)

    @property
    def false_positives(self) -> int:
        return sum(1 for g, ig in zip(self.det_gt, self.det_ignored) if g < 0 and not ig)


def _greedy(ious: np.ndarray, gt_ignore: np.ndarray, thr: float):
    """Greedy COCO matching; rows are detections in score order."""
    n_det, n_gt = ious.shape
    det_gt = np.full(n_det, -1, dtype=np.int64)
    taken = np.zeros(n_gt, dtype=bool)
    for d in range(n_det):
        best, best_iou = -1, -1.0
        for want_ignored in (False, True):
            for g in range(n_gt):
                if taken[g] or gt_ignore[g] != want_ignored:
                    continue
                v = ious[d, g]
                if v >= thr and v > best_iou:
                    best, best_iou = g, v
            if best >= 0:
                break
        if best >= 0:
            taken[best] = True
            det_gt[d] = best
    return det_gt, taken


def _sorted_dets(dets):
    # score desc; geometry breaks ties so the order never depends on input order
    return sorted(dets, key=Detection.sort_key)


def match(dets, gts, iou_threshold: float, max_dets: int = 100, class_aware: bool = True) -> MatchResult:
    """Match one image's detections against its ground truth.

    ``dets`` are visited by descending score and truncated to ``max_dets``
    (per class when ``class_aware``).
    """
    dets = _sorted_dets(dets)
    gts = list(gts)
    det_gt = [-1] * len(dets)
    det_iou = [0.0] * len(dets)
    gt_matched = [False] * len(gts)
    keys = sorted({d.class_id for d in dets} | {g.class_id for g in gts}) if class_aware else [None]
    for key in keys:
        di = [n for n, d in enumerate(dets) if key is None or d.class_id == key][:max_dets]
        gi = [n for n, g in enumerate(gts) if key is None or g.class_id == key]
        if not di:
            continue
        ious = iou_matrix([dets[n].box.as_tuple() for n in di], [gts[n].box.as_tuple() for n in gi])
        m, taken = _greedy(ious, np.zeros(len(gi), dtype=bool), iou_threshold)
        for row, col in enumerate(m):
            if col >= 0:
                det_gt[di[row]] = gi[col]
                det_iou[di[row]] = float(ious[row, col])
        for col, t in enumerate(taken):
            if t:
                gt_matched[gi[col]] = True
    return MatchResult(det_gt, det_iou, [d.score for d in dets], [False] * len(dets), gt_matched)


# -- dataset-level accumulation --------------------------------------------


@dataclass
class _Cell:
    """One (image, class) evaluation unit with its IoU matrix."""

    image_id: int
    class_id: int
    scores: np.ndarray
    det_boxes: list
    gt_boxes: list
    ious: np.ndarray


def _cells(dets, gts: Mapping[int, Sequence[GroundTruth]], max_dets: int, class_aware: bool):
    by_key: dict = {}
    for image_id, items in gts.items():
        for g in items:
            k = (image_id, g.class_id if class_aware else 0)
            by_key.setdefault(k, ([], []))[1].append(g.box)
    per_key_dets: dict = {}
    for d in dets:
        k = (d.image_id, d.class_id if class_aware else 0)
        per_key_dets.setdefault(k, []).append(d)
    for k, items in per_key_dets.items():
        by_key.setdefault(k, ([], []))[0].extend(_sorted_dets(items)[:max_dets])
    cells = []
    for (image_id, cls), (dl, gl) in sorted(by_key.items()):
        ious = iou_matrix([d.box.as_tuple() for d in dl], [b.as_tuple() for b in gl])
        cells.append(_Cell(image_id, cls, np.array([d.score for d in dl], dtype=np.float64),
                           [d.box for d in dl], gl, ious.reshape(len(dl), len(gl))))
    return cells


@dataclass
class _Curve:
    """Per-class accumulated match outcomes for one (threshold, range) setting."""

    scores: list = field(default_factory=list)
    tp: list = field(default_factory=list)
    rank: list = field(default_factory=list)
    order: list = field(default_factory=list)
    n_gt: int = 0


def _accumulate(cells, thr: float, gt_in_range: Callable[[Box], bool], det_in_range: Callable[[Box], bool]):
    curves: dict[int, _Curve] = {}
    for n, cell in enumerate(cells):
        curve = curves.setdefault(cell.class_id, _Curve())
        gt_ignore = np.array([not gt_in_range(b) for b in cell.gt_boxes], dtype=bool)
        curve.n_gt += int((~gt_ignore).sum())
        if not len(cell.scores):
            continue
        det_gt, _ = _greedy(cell.ious, gt_ignore, thr)
        for r, g in enumerate(det_gt):
            if g >= 0:
                if gt_ignore[g]:
                    continue
                tp = True
            else:
                if not det_in_range(cell.det_boxes[r]):
                    continue
                tp = False
            curve.scores.append(cell.scores[r])
            curve.tp.append(tp)
            curve.rank.append(r)
            curve.order.append(n)
    return curves


def _ap_and_recall(curve: _Curve, max_dets: Optional[int] = None):
    if curve.n_gt == 0:
        return None, None
    scores = np.array(curve.scores, dtype=np.float64)
    tp = np.array(curve.tp, dtype=bool)
    rank = np.array(curve.rank, dtype=np.int64)
    if max_dets is not None and len(rank):
        keep = rank < max_dets
        scores, tp, rank = scores[keep], tp[keep], rank[keep]
        origin = np.array(curve.order, dtype=np.int64)[keep]
    else:
        origin = np.array(curve.order, dtype=np.int64)
    if not len(scores):
        return 0.0, 0.0
    # score desc; ties in (image, rank) order, stable across runs
    order = np.lexsort((rank, origin, -scores))
    tp = tp[order]
    tps = np.cumsum(tp)
    fps = np.cumsum(~tp)
    recall = tps / curve.n_gt
    precision = tps / (tps + fps)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    q = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(q.mean()), float(recall[-1])


def _mean(values):
    vals = [v for v in values if v is not None]
    return None if not vals else float(np.mean(vals))


class Evaluator:
    """Caches IoU matrices so that many (threshold, range) queries stay cheap."""

    def __init__(self, dets, gts: Mapping[int, Sequence[GroundTruth]], max_dets: int = 100,
                 class_aware: bool = True):
        self.max_dets = max_dets
        self.cells = _cells(list(dets), gts, max_dets, class_aware)
        self._cache: dict = {}

    def _curves(self, thr, area_key, gt_pred=None, det_pred=None):
        key = (thr, area_key)
        if key not in self._cache:
            if gt_pred is None:
                rng = AREA_RANGES[area_key]
                gt_pred = det_pred = lambda b: _in_area(b.area, rng)  # noqa: E731
            self._cache[key] = _accumulate(self.cells, thr, gt_pred, det_pred)
        return self._cache[key]

    def ap(self, thr: float, area: str = "all") -> Optional[float]:
        """Class-mean AP at one IoU threshold; ``None`` when no ground truth exists."""
        return _mean(_ap_and_recall(c)[0] for c in self._curves(thr, area).values())

    def recall(self, thr: float, area: str = "all", max_dets: Optional[int] = None) -> Optional[float]:
        return _mean(_ap_and_recall(c, max_dets)[1] for c in self._curves(thr, area).values())

    def ap_over(self, thresholds, area: str = "all") -> Optional[float]:
        return _mean(self.ap(t, area) for t in thresholds)

    def ar_over(self, thresholds, area: str = "all", max_dets: Optional[int] = None) -> Optional[float]:
        return _mean(self.recall(t, area, max_dets) for t in thresholds)

    def binned_recall(self, name: str, gt_pred, thresholds=IOU_THRESHOLDS) -> Optional[float]:
        vals = []
        for t in thresholds:
            curves = self._curves(t, name, gt_pred, gt_pred)
            vals.append(_mean(_ap_and_recall(c)[1] for c in curves.values()))
        return _mean(vals)


def average_precision(dets, gts, iou_threshold: float, max_dets: int = 100, area: str = "all") -> Optional[float]:
    """101-point interpolated AP at one IoU threshold, averaged over classes.

    Returns ``None`` when no ground truth exists at all.
    """
    return Evaluator(dets, gts, max_dets).ap(iou_threshold, area)


def af_rate(dets, gts, variant: str = "overall", value=None, max_dets: int = 100) -> Optional[float]:
    """Average false-discovery rate, ``1 - AP`` over low IoU thresholds.

    ``variant``: ``"overall"`` (IoU 0.05:0.05:0.5), ``"iou"`` with ``value``
    a single threshold such as 0.05, or ``"scale"`` with ``value`` one of
    small/medium/large (AP over the low thresholds within that area range).
    """
    ev = Evaluator(dets, gts, max_dets)
    return _af(ev, variant, value)


def _af(ev: Evaluator, variant: str, value=None) -> Optional[float]:
    if variant == "overall":
        ap = ev.ap_over(LOW_IOU_THRESHOLDS)
    elif variant == "iou":
        ap = ev.ap(float(value))
    elif variant == "scale":
        ap = ev.ap_over(LOW_IOU_THRESHOLDS, str(value))
    else:
        raise ValueError(f"unknown AF variant {variant!r}")
    return None if ap is None else 1.0 - ap


def _area_pred(rng):
    return lambda b: rng[0] < b.area <= rng[1]


def _aspect_pred(rng):
    return lambda b: rng[0] <= aspect_ratio(b) < rng[1]


def geometry_recall(dets, gts, max_dets: int = 1000, cumulative_aspect: bool = False) -> dict[str, Optional[float]]:
    """Class- and score-agnostic recall per area bin and aspect-ratio bin.

    Up to ``max_dets`` proposals per image, in descending score order, are
    matched without regard to class; recall is averaged over IoU
    0.5:0.05:0.95. Aspect bins are disjoint ``[k, k+1)`` (``[8, inf)`` for
    the last) unless ``cumulative_aspect``, which makes every bin ``[k, inf)``.
    Bins without ground truth report ``None``.
    """
    ev = Evaluator(dets, gts, max_dets, class_aware=False)
    out = {}
    for name, rng in GEOMETRY_AREA_BINS.items():
        out[name] = ev.binned_recall(name, _area_pred(rng))
    for name, rng in GEOMETRY_ASPECT_BINS.items():
        if cumulative_aspect:
            rng = (rng[0], math.inf)
        out[name] = ev.binned_recall(name + ("+" if cumulative_aspect else ""), _aspect_pred(rng))
    return out


@dataclass
class EvalReport:
    AP: Optional[float] = None
    AP50: Optional[float] = None
    AP75: Optional[float] = None
    AP_S: Optional[float] = None
    AP_M: Optional[float] = None
    AP_L: Optional[float] = None
    AR_1: Optional[float] = None
    AR_10: Optional[float] = None
    AR_100: Optional[float] = None
    AR_S: Optional[float] = None
    AR_M: Optional[float] = None
    AR_L: Optional[float] = None
    AF: Optional[float] = None
    AF5: Optional[float] = None
    AF25: Optional[float] = None
    AF50: Optional[float] = None
    AF_S: Optional[float] = None
    AF_M: Optional[float] = None
    AF_L: Optional[float] = None
    geometry: dict = field(default_factory=dict)
    num_images: int = 0
    num_detections: int = 0
    num_ground_truth: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def table(self) -> str:
        """Aligned plain-text tables, values in percent with one decimal."""
        blocks = [
            ("AP", "AP50", "AP75", "AP_S", "AP_M", "AP_L"),
            ("AR_1", "AR_10", "AR_100", "AR_S", "AR_M", "AR_L"),
            ("AF", "AF5", "AF25", "AF50", "AF_S", "AF_M", "AF_L"),
        ]
        rows = [[(k, getattr(self, k)) for k in block] for block in blocks]
        if self.geometry:
            rows.append(list(self.geometry.items()))
        lines = []
        for row in rows:
            lines.append("  ".join(f"{k:>7}" for k, _ in row))
            lines.append("  ".join(f"{_pct(v):>7}" for _, v in row))
        return "\n".join(lines)


def _pct(v) -> str:
    return "-" if v is None else f"{100.0 * v:.1f}"


def evaluate(dets, gts: Mapping[int, Sequence[GroundTruth]], geometry: bool = True) -> EvalReport:
    dets = list(dets)
    ev = Evaluator(dets, gts, 100)
    r = EvalReport(
        AP=ev.ap_over(IOU_THRESHOLDS),
        AP50=ev.ap(0.5),
        AP75=ev.ap(0.75),
        AP_S=ev.ap_over(IOU_THRESHOLDS, "small"),
        AP_M=ev.ap_over(IOU_THRESHOLDS, "medium"),
        AP_L=ev.ap_over(IOU_THRESHOLDS, "large"),
        AR_1=ev.ar_over(IOU_THRESHOLDS, max_dets=1),
        AR_10=ev.ar_over(IOU_THRESHOLDS, max_dets=10),
        AR_100=ev.ar_over(IOU_THRESHOLDS),
        AR_S=ev.ar_over(IOU_THRESHOLDS, "small"),
        AR_M=ev.ar_over(IOU_THRESHOLDS, "medium"),
        AR_L=ev.ar_over(IOU_THRESHOLDS, "large"),
        AF=_af(ev, "overall"),
        AF5=_af(ev, "iou", 0.05),
        AF25=_af(ev, "iou", 0.25),
        AF50=_af(ev, "iou", 0.5),
        AF_S=_af(ev, "scale", "small"),
        AF_M=_af(ev, "scale", "medium"),
        AF_L=_af(ev, "scale", "large"),
        num_images=len(gts),
        num_detections=len(dets),
        num_ground_truth=sum(len(v) for v in gts.values()),
    )
    if geometry:
        r.geometry = geometry_recall(dets, gts)
    return r
