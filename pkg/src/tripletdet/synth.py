"""Synthetic ground truth and the grids a perfect backbone would emit.

Scenes are sampled so that the oracle is decodable: keypoints of one kind
never share a cell, same-class keypoints stay at least two cells apart and
each rendered keypoint is a strict heatmap peak. Spurious corners injected
by :func:`inject_noise` come in embedding-compatible pairs so only the
center check can reject them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .decode import central_region, select_n, DecodeConfig
from .errors import SpecError
from .grid import DenseGrid
from .keypoints import PeakConfig, peak_arrays
from .records import DEFAULT_LEVELS, Box, GroundTruth, LevelSpec, validate_levels
from .scene import Scene
from .suppress import iou


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    width: int = 512
    height: int = 512
    box_count: tuple[int, int] = (1, 8)
    num_classes: int = 3
    # longer box side in pixels, log-uniform
    size_range: tuple[float, float] = (24.0, 440.0)
    # max(w, h) / min(w, h), log-uniform
    aspect_range: tuple[float, float] = (1.0, 10.0)
    min_side: float = 8.0
    stride: int = 4
    levels: tuple[LevelSpec, ...] = DEFAULT_LEVELS
    keypoint_score_range: tuple[float, float] = (1.0, 1.0)
    noise_pairs: int = 0
    noise_score_range: tuple[float, float] = (0.5, 1.0)
    noise_size_range: tuple[float, float] = (12.0, 96.0)
    max_same_class_iou: float = 0.5
    max_attempts: int = 400
    render_sr: bool = True
    render_mr: bool = True

    def validate(self) -> "SceneSpec":
        lo, hi = self.box_count
        if lo < 0 or hi < lo:
            raise SpecError(f"box_count must satisfy 0 <= lo <= hi, got {self.box_count}")
        if self.num_classes < 1:
            raise SpecError("num_classes must be >= 1")
        if self.size_range[0] <= 0 or self.size_range[1] < self.size_range[0]:
            raise SpecError(f"bad size_range {self.size_range}")
        if self.size_range[0] > min(self.width, self.height) - 1:
            raise SpecError(
                f"smallest box side {self.size_range[0]} does not fit a {self.width}x{self.height} image"
            )
        if self.aspect_range[0] < 1 or self.aspect_range[1] < self.aspect_range[0]:
            raise SpecError(f"bad aspect_range {self.aspect_range}")
        if self.size_range[1] / self.aspect_range[0] < self.min_side:
            raise SpecError("size_range/aspect_range leave no box with min side >= min_side")
        if self.stride < 1:
            raise SpecError("stride must be >= 1")
        lo_s, hi_s = self.keypoint_score_range
        if not 0 < lo_s <= hi_s <= 1:
            raise SpecError(f"keypoint_score_range must lie in (0, 1], got {self.keypoint_score_range}")
        validate_levels(self.levels)
        return self


# -- rendering -------------------------------------------------------------


def gaussian_radius(height: float, width: float, min_overlap: float = 0.3) -> float:
    """Largest per-coordinate corner displacement (in cells) that keeps
    IoU >= ``min_overlap`` with the true box.

    Three displacement patterns bound it: both corners moved the same way
    (translation), both moved inward (shrink) and both moved outward (grow).
    Each gives a quadratic in ``r``; the radius is the smallest root that
    applies.
    """
    h, w, o = float(height), float(width), float(min_overlap)
    # translation: (w - r)(h - r) / (2wh - (w - r)(h - r)) = o
    b1 = w + h
    c1 = w * h * (1 - o) / (1 + o)
    r1 = (b1 - math.sqrt(b1 * b1 - 4 * c1)) / 2
    # shrink: (w - 2r)(h - 2r) / wh = o
    b2 = 2 * (w + h)
    c2 = (1 - o) * w * h
    r2 = (b2 - math.sqrt(b2 * b2 - 16 * c2)) / 8
    # grow: wh / ((w + 2r)(h + 2r)) = o
    a3 = 4 * o
    b3 = 2 * o * (w + h)
    c3 = (o - 1) * w * h
    r3 = (-b3 + math.sqrt(b3 * b3 - 4 * a3 * c3)) / (2 * a3)
    return min(r1, r2, r3)


def _radius_cells(box: Box, stride: int) -> int:
    return max(0, int(gaussian_radius(math.ceil(box.height / stride), math.ceil(box.width / stride))))


def draw_gaussian(plane: np.ndarray, row: int, col: int, radius: int, peak: float) -> None:
    """Max-combine ``peak * exp(-d^2 / (2 sigma^2))`` (sigma = radius / 3) around a cell."""
    H, W = plane.shape
    if radius <= 0:
        plane[row, col] = max(plane[row, col], peak)
        return
    sigma = radius / 3.0
    r0, r1 = max(0, row - radius), min(H, row + radius + 1)
    c0, c1 = max(0, col - radius), min(W, col + radius + 1)
    dy = (np.arange(r0, r1) - row)[:, None]
    dx = (np.arange(c0, c1) - col)[None, :]
    g = (peak * np.exp(-(dx * dx + dy * dy) / (2 * sigma * sigma))).astype(np.float32)
    g[row - r0, col - c0] = np.float32(peak)
    np.maximum(plane[r0:r1, c0:c1], g, out=plane[r0:r1, c0:c1])


def keypoint_cell(x: float, y: float, stride: int, shape) -> tuple[int, int, float, float]:
    """Cell holding an image point and the fractional offset inside it."""
    H, W = shape
    fx, fy = x / stride, y / stride
    j = min(int(math.floor(fx)), W - 1)
    i = min(int(math.floor(fy)), H - 1)
    return i, j, fx - j, fy - i


def _keypoints(gt: GroundTruth):
    b = gt.box
    cx, cy = b.center
    return {"tl": (b.tl_x, b.tl_y), "br": (b.br_x, b.br_y), "ct": (cx, cy)}


def render_sr(scene: Scene, stride: int | None = None) -> dict[str, DenseGrid]:
    """Corner and center heatmaps, corner embeddings and sub-cell offsets.

    Object ``k`` gets embedding value ``k`` on both of its corner cells.
    """
    stride = scene.stride if stride is None else stride
    H, W = scene.grid_shape(stride)
    C = scene.num_classes
    heat = {kind: np.zeros((C, H, W), np.float32) for kind in ("tl", "br", "ct")}
    off = {kind: np.zeros((2, H, W), np.float32) for kind in ("tl", "br", "ct")}
    emb = {kind: np.zeros((1, H, W), np.float32) for kind in ("tl", "br")}
    for k, gt in enumerate(scene.ground_truth):
        radius = _radius_cells(gt.box, stride)
        scores = scene.keypoint_scores[k] if k < len(scene.keypoint_scores) else (1.0, 1.0, 1.0)
        for kind, (x, y), peak in zip(("tl", "br", "ct"), _keypoints(gt).values(), scores):
            i, j, dx, dy = keypoint_cell(x, y, stride, (H, W))
            draw_gaussian(heat[kind][gt.class_id], i, j, radius, peak)
            off[kind][0, i, j] = dx
            off[kind][1, i, j] = dy
            if kind in emb:
                emb[kind][0, i, j] = k
    grids = {}
    for kind in ("tl", "br", "ct"):
        grids[f"{kind}_heat"] = DenseGrid.wrap(heat[kind], f"{kind}_heat")
        grids[f"{kind}_off"] = DenseGrid.wrap(off[kind], f"{kind}_off")
    for kind in ("tl", "br"):
        grids[f"{kind}_embed"] = DenseGrid.wrap(emb[kind], f"{kind}_embed")
    return grids


def assign_level(box: Box, levels) -> int:
    """Index of the level with ``stride <= max_side / 8 < next stride``, clamped."""
    size = max(box.width, box.height) / 8.0
    pos = 0
    for n, lv in enumerate(levels):
        if lv.stride <= size:
            pos = n
    return pos


def sub_boxes(box: Box) -> tuple[Box, Box, Box, Box]:
    """The four quadrants split at the geometric center: tl, tr, bl, br."""
    cx, cy = box.center
    return (
        Box(box.tl_x, box.tl_y, cx, cy),
        Box(cx, box.tl_y, box.br_x, cy),
        Box(box.tl_x, cy, cx, box.br_y),
        Box(cx, cy, box.br_x, box.br_y),
    )


class _Unrenderable(Exception):
    pass


def _render_level_branch(scene, lv, members, branch, C):
    H, W = scene.grid_shape(lv.stride)
    s = lv.stride
    cls = np.zeros((C, H, W), np.float32)
    reg = np.zeros((4, H, W), np.float32)
    owner = np.full((H, W), -1, dtype=np.int64)
    # smaller boxes claim shared cells first
    members = sorted(members, key=lambda k: (scene.ground_truth[k].box.area, k))
    geo = {}
    for k in members:
        gt = scene.ground_truth[k]
        sub = sub_boxes(gt.box)[0 if branch == "tl" else 3]
        corner = (gt.box.tl_x, gt.box.tl_y) if branch == "tl" else (gt.box.br_x, gt.box.br_y)
        geo[k] = (sub, corner, gt.box.center)
        scx, scy = sub.center
        ai = min(max(int(math.floor(scy / s)), 0), H - 1)
        aj = min(max(int(math.floor(scx / s)), 0), W - 1)
        if owner[ai, aj] >= 0:
            raise _Unrenderable(f"anchor cell collision on {lv.level_id}/{branch}")
        owner[ai, aj] = k
        _write(cls, reg, ai, aj, gt.class_id, 1.0, s, corner, gt.box.center)
    for k in members:
        sub, corner, center = geo[k]
        cls_id = scene.ground_truth[k].class_id
        i0, i1 = max(0, int(math.floor(sub.tl_y / s - 0.5))), min(H, int(math.ceil(sub.br_y / s)) + 1)
        j0, j1 = max(0, int(math.floor(sub.tl_x / s - 0.5))), min(W, int(math.ceil(sub.br_x / s)) + 1)
        scx, scy = sub.center
        hw, hh = max(sub.width / 2, 1e-9), max(sub.height / 2, 1e-9)
        for i in range(i0, i1):
            py = (i + 0.5) * s
            if not sub.tl_y <= py <= sub.br_y:
                continue
            for j in range(j0, j1):
                px = (j + 0.5) * s
                if not sub.tl_x <= px <= sub.br_x or owner[i, j] >= 0:
                    continue
                d = max(abs(px - scx) / hw, abs(py - scy) / hh)
                owner[i, j] = k
                _write(cls, reg, i, j, cls_id, min(1.0 - 0.5 * d, 0.99), s, corner, center)
    return cls, reg


def _write(cls, reg, i, j, c, score, s, corner, center):
    px, py = (j + 0.5) * s, (i + 0.5) * s
    cls[c, i, j] = score
    reg[:, i, j] = (corner[0] - px, corner[1] - py, center[0] - px, center[1] - py)


def render_mr(scene: Scene, levels=None) -> dict[str, dict[str, DenseGrid]]:
    """Per-level classification and sub-box regression grids.

    Each box goes to one level by size. Feature points inside its top-left
    (bottom-right) quadrant point at the box's top-left (bottom-right) corner
    and at its center. The cell nearest the quadrant's center scores 1 and
    the others fall off linearly to 0.5 toward the quadrant border, which
    keeps every object among a level's top-k selections.
    """
    levels = validate_levels(scene.levels if levels is None else levels)
    if not levels:
        raise SpecError("render_mr needs at least one level")
    C = scene.num_classes
    members = {n: [] for n in range(len(levels))}
    for k, gt in enumerate(scene.ground_truth):
        members[assign_level(gt.box, levels)].append(k)
    out = {}
    for n, lv in enumerate(levels):
        grids = {}
        for branch in ("tl", "br"):
            cls, reg = _render_level_branch(scene, lv, members[n], branch, C)
            grids[f"{branch}_cls"] = DenseGrid.wrap(cls, f"{lv.level_id}/{branch}_cls")
            grids[f"{branch}_reg"] = DenseGrid.wrap(reg, f"{lv.level_id}/{branch}_reg")
        out[lv.level_id] = grids
    return out


# -- sampling --------------------------------------------------------------


def _log_uniform(rng, lo, hi):
    if hi <= lo:
        return float(lo)
    return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))


def _sample_box(rng, spec: SceneSpec) -> Box | None:
    big = _log_uniform(rng, *spec.size_range)
    ratio = _log_uniform(rng, *spec.aspect_range)
    small = big / ratio
    if small < spec.min_side:
        return None
    w, h = (big, small) if rng.random() < 0.5 else (small, big)
    if w > spec.width - 1 or h > spec.height - 1:
        return None
    x = rng.uniform(0, spec.width - 1 - w)
    y = rng.uniform(0, spec.height - 1 - h)
    return Box(x, y, x + w, y + h)


def _cells(gt: GroundTruth, stride: int, shape):
    return {kind: keypoint_cell(x, y, stride, shape)[:2] for kind, (x, y) in _keypoints(gt).items()}


def _compatible(new: GroundTruth, placed, spec: SceneSpec, shape) -> bool:
    cells_new = _cells(new, spec.stride, shape)
    cfg = DecodeConfig()
    for old in placed:
        cells_old = _cells(old, spec.stride, shape)
        for kind in ("tl", "br", "ct"):
            (a, b), (c, d) = cells_new[kind], cells_old[kind]
            cheb = max(abs(a - c), abs(b - d))
            if cheb == 0 or (new.class_id == old.class_id and cheb < 2):
                return False
        if new.class_id != old.class_id:
            continue
        if iou(new.box, old.box) > spec.max_same_class_iou:
            return False
        # a corner from one object and the opposite corner from another must
        # not enclose both objects' centers, or the dual-center check passes them
        for a, b in ((new, old), (old, new)):
            span = Box(a.box.tl_x, a.box.tl_y, b.box.br_x, b.box.br_y)
            if not span.is_valid():
                continue
            region = central_region(span, select_n(span, cfg))
            grown = Box(region.ctl_x - 1, region.ctl_y - 1, region.cbr_x + 1, region.cbr_y + 1)
            if grown.contains(*a.box.center) and grown.contains(*b.box.center):
                return False
    return True


def _peaks_match(scene: Scene, grids) -> bool:
    shape = scene.grid_shape(scene.stride)
    pcfg = PeakConfig(k=10**9)
    for kind in ("tl", "br", "ct"):
        p = peak_arrays(grids[f"{kind}_heat"], pcfg)
        found = set(zip(p.cls.tolist(), p.row.tolist(), p.col.tolist()))
        want = set()
        for gt in scene.ground_truth:
            i, j = _cells(gt, scene.stride, shape)[kind]
            want.add((gt.class_id, i, j))
        if found != want:
            return False
    return True


def generate_scene(spec: SceneSpec, image_id: int | None = None, rng=None) -> Scene:
    """Sample ground truth under ``spec`` and render the oracle grids.

    Deterministic for a given ``spec.seed`` (or ``rng``).
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    image_id = spec.seed if image_id is None else image_id
    levels = list(spec.levels)
    shape = (math.ceil(spec.height / spec.stride), math.ceil(spec.width / spec.stride))
    for _ in range(spec.max_attempts):
        n_boxes = int(rng.integers(spec.box_count[0], spec.box_count[1] + 1))
        placed: list[GroundTruth] = []
        for _ in range(n_boxes):
            for _ in range(spec.max_attempts):
                box = _sample_box(rng, spec)
                if box is None:
                    continue
                gt = GroundTruth(int(rng.integers(spec.num_classes)), box)
                if _compatible(gt, placed, spec, shape):
                    placed.append(gt)
                    break
            else:
                break
        if len(placed) != n_boxes:
            continue
        lo, hi = spec.keypoint_score_range
        scores = [tuple(float(rng.uniform(lo, hi)) if hi > lo else float(lo) for _ in range(3)) for _ in placed]
        scene = Scene(image_id, spec.width, spec.height, placed, spec.num_classes, spec.stride, levels, scores)
        grids = render_sr(scene)
        if not _peaks_match(scene, grids):
            continue
        try:
            level_grids = render_mr(scene) if spec.render_mr else {}
        except _Unrenderable:
            continue
        scene.grids = grids if spec.render_sr else {k: v for k, v in grids.items() if not k.endswith("_embed")}
        scene.level_grids = level_grids
        if spec.noise_pairs:
            inject_noise(scene, spec, rng)
        for g in scene.grids.values():
            g.freeze()
        for lg in scene.level_grids.values():
            for g in lg.values():
                g.freeze()
        return scene
    raise SpecError(f"could not sample a decodable scene in {spec.max_attempts} attempts (seed {spec.seed})")


def generate_dataset(spec: SceneSpec, count: int, first_id: int = 1) -> list[Scene]:
    """``count`` scenes; scene ``n`` draws from ``SeedSequence([seed, n])``."""
    out = []
    for n in range(count):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, n]))
        out.append(generate_scene(spec, image_id=first_id + n, rng=rng))
    return out


# -- corruption ------------------------------------------------------------


def _window_max(plane, i, j):
    return float(plane[max(0, i - 1) : i + 2, max(0, j - 1) : j + 2].max())


def inject_noise(scene: Scene, spec: SceneSpec, rng) -> Scene:
    """Add ``spec.noise_pairs`` spurious top-left/bottom-right peak pairs.

    Each pair shares a fresh embedding value, is correctly ordered, overlaps
    no same-class ground truth (IoU < 0.05) and encloses no same-class center
    in its central region, so pairing accepts it and only the center check
    can remove it. No center peaks are added. Grids are replaced by
    modified copies; ``scene.noise`` records every injected pair.
    """
    if spec.noise_pairs <= 0:
        return scene
    if "tl_heat" not in scene.grids:
        raise SpecError("inject_noise needs rendered corner heatmaps")
    shape = scene.grid_shape(scene.stride)
    H, W = shape
    s = scene.stride
    heat = {k: scene.grids[f"{k}_heat"].array.copy() for k in ("tl", "br")}
    off = {k: scene.grids[f"{k}_off"].array.copy() for k in ("tl", "br")}
    emb = {k: scene.grids[f"{k}_embed"].array.copy() for k in ("tl", "br") if f"{k}_embed" in scene.grids}
    occupied = {k: {(i, j) for (i, j) in (_cells(g, s, shape)[k] for g in scene.ground_truth)} for k in ("tl", "br")}
    cfg = DecodeConfig()
    next_emb = float(len(scene.ground_truth))
    records = []
    attempts = 0
    while len(records) < spec.noise_pairs:
        attempts += 1
        if attempts > 200 * spec.noise_pairs + 1000:
            raise SpecError(f"could not place {spec.noise_pairs} spurious pairs in scene {scene.image_id}")
        c = int(rng.integers(scene.num_classes))
        w = _log_uniform(rng, *spec.noise_size_range)
        h = _log_uniform(rng, *spec.noise_size_range)
        if w > scene.width - 1 or h > scene.height - 1:
            continue
        x = rng.uniform(0, scene.width - 1 - w)
        y = rng.uniform(0, scene.height - 1 - h)
        box = Box(x, y, x + w, y + h)
        st = float(rng.uniform(*spec.noise_score_range))
        sb = float(rng.uniform(*spec.noise_score_range))
        same = [g for g in scene.ground_truth if g.class_id == c]
        if any(iou(box, g.box) >= 0.05 for g in same):
            continue
        region = central_region(box, select_n(box, cfg))
        grown = Box(region.ctl_x - 2 * s, region.ctl_y - 2 * s, region.cbr_x + 2 * s, region.cbr_y + 2 * s)
        if any(grown.contains(*g.box.center) for g in same):
            continue
        cells = {}
        ok = True
        for kind, (px, py), score in (("tl", (box.tl_x, box.tl_y), st), ("br", (box.br_x, box.br_y), sb)):
            i, j, dx, dy = keypoint_cell(px, py, s, shape)
            if any(max(abs(i - a), abs(j - b)) < 2 for a, b in occupied[kind]):
                ok = False
                break
            # the window must stay below the new peak and the cell must be far
            # enough from every existing peak that their windows are untouched
            if _window_max(heat[kind][c], i, j) >= score:
                ok = False
                break
            cells[kind] = (i, j, dx, dy, score)
        if not ok:
            continue
        for kind, (i, j, dx, dy, score) in cells.items():
            heat[kind][c, i, j] = score
            off[kind][:, i, j] = (dx, dy)
            if kind in emb:
                emb[kind][0, i, j] = next_emb
            occupied[kind].add((i, j))
        records.append({
            "class_id": c,
            "xyxy": [box.tl_x, box.tl_y, box.br_x, box.br_y],
            "scores": [st, sb],
            "embedding": next_emb,
        })
        next_emb += 1.0
    for kind in ("tl", "br"):
        scene.grids[f"{kind}_heat"] = DenseGrid.wrap(heat[kind], f"{kind}_heat")
        scene.grids[f"{kind}_off"] = DenseGrid.wrap(off[kind], f"{kind}_off")
        if kind in emb:
            scene.grids[f"{kind}_embed"] = DenseGrid.wrap(emb[kind], f"{kind}_embed")
    scene.noise = scene.noise + records
    return scene


def corrupt_regression(scene: Scene, max_shift: float, rng) -> Scene:
    """Jitter every multi-resolution regression vector by up to ``max_shift``
    pixels per axis, independently per cell and component.

    Keep ``max_shift`` below a quarter of the minimum same-kind keypoint
    spacing (two cells) so heatmap snapping can still find the right peak.
    """
    if max_shift < 0:
        raise SpecError("max_shift must be >= 0")
    for lv in scene.levels:
        grids = dict(scene.level_grids[lv.level_id])
        for branch in ("tl", "br"):
            reg = grids[f"{branch}_reg"].array.copy()
            active = grids[f"{branch}_cls"].array.max(axis=0) > 0
            shift = rng.uniform(-max_shift, max_shift, size=reg.shape).astype(np.float32)
            reg += np.where(active[None], shift, np.float32(0))
            grids[f"{branch}_reg"] = DenseGrid.wrap(reg, f"{branch}_reg").freeze()
        scene.level_grids[lv.level_id] = grids
    return scene


def shift_regression(scene: Scene, branch: str, dx: float, dy: float, vector: str = "corner") -> Scene:
    """Add a constant ``(dx, dy)`` to one branch's corner (or center) vectors
    at every labelled feature point on every level."""
    if branch not in ("tl", "br") or vector not in ("corner", "center"):
        raise SpecError(f"bad branch/vector {branch!r}/{vector!r}")
    ch = 0 if vector == "corner" else 2
    for lv in scene.levels:
        grids = dict(scene.level_grids[lv.level_id])
        reg = grids[f"{branch}_reg"].array.copy()
        active = grids[f"{branch}_cls"].array.max(axis=0) > 0
        reg[ch][active] += np.float32(dx)
        reg[ch + 1][active] += np.float32(dy)
        grids[f"{branch}_reg"] = DenseGrid.wrap(reg, f"{branch}_reg").freeze()
        scene.level_grids[lv.level_id] = grids
    return scene


def flip_scene(scene: Scene) -> Scene:
    """The same scene mirrored horizontally, re-rendered (no noise)."""
    gts = [GroundTruth(g.class_id, Box(scene.width - g.box.br_x, g.box.tl_y, scene.width - g.box.tl_x, g.box.br_y))
           for g in scene.ground_truth]
    flipped = Scene(scene.image_id, scene.width, scene.height, gts, scene.num_classes, scene.stride,
                    list(scene.levels), list(scene.keypoint_scores))
    flipped.grids = render_sr(flipped)
    if scene.level_grids:
        flipped.level_grids = render_mr(flipped)
    return flipped
