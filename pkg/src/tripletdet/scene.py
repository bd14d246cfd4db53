"""Scene container and its on-disk manifest.

A scene directory holds ``manifest.json`` plus one CNGRID file per grid::

    manifest.json
    tl_heat.cngrid  br_heat.cngrid  ct_heat.cngrid  ...
    P3_tl_cls.cngrid  P3_tl_reg.cngrid  ...
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import GridFormatError
from .grid import DenseGrid
from .io import load_grid, read_json, save_grid, write_json
from .records import Box, GroundTruth, LevelSpec

MANIFEST = "manifest.json"


@dataclass
class Scene:
    image_id: int
    width: int
    height: int
    ground_truth: list[GroundTruth]
    num_classes: int
    stride: int = 4
    levels: list[LevelSpec] = field(default_factory=list)
    # per object (tl, br, center) peak heights
    keypoint_scores: list[tuple[float, float, float]] = field(default_factory=list)
    grids: dict[str, DenseGrid] = field(default_factory=dict)
    level_grids: dict[str, dict[str, DenseGrid]] = field(default_factory=dict)
    noise: list[dict] = field(default_factory=list)

    def grid_shape(self, stride: int) -> tuple[int, int]:
        return math.ceil(self.height / stride), math.ceil(self.width / stride)

    @property
    def has_sr(self) -> bool:
        return "tl_embed" in self.grids

    @property
    def has_mr(self) -> bool:
        return bool(self.level_grids)


def _gt_json(gt: GroundTruth) -> dict:
    b = gt.box
    return {"category_id": gt.class_id, "xyxy": [b.tl_x, b.tl_y, b.br_x, b.br_y]}


def save_scene(scene: Scene, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    grid_files = {}
    for name in sorted(scene.grids):
        fname = f"{name}.cngrid"
        save_grid(scene.grids[name], d / fname)
        grid_files[name] = fname
    levels = []
    for lv in scene.levels:
        files = {}
        for name in sorted(scene.level_grids.get(lv.level_id, {})):
            fname = f"{lv.level_id}_{name}.cngrid"
            save_grid(scene.level_grids[lv.level_id][name], d / fname)
            files[name] = fname
        levels.append({"level_id": lv.level_id, "stride": lv.stride, "grids": files})
    manifest = {
        "image_id": scene.image_id,
        "width": scene.width,
        "height": scene.height,
        "num_classes": scene.num_classes,
        "stride": scene.stride,
        "ground_truth": [_gt_json(g) for g in scene.ground_truth],
        "keypoint_scores": [list(s) for s in scene.keypoint_scores],
        "grids": grid_files,
        "levels": levels,
        "noise": scene.noise,
    }
    write_json(d / MANIFEST, manifest)
    return d


def load_scene(directory, load_grids: bool = True) -> Scene:
    d = Path(directory)
    path = d / MANIFEST
    if not path.is_file():
        raise GridFormatError(f"{d}: no {MANIFEST}")
    m = read_json(path)
    try:
        gts = [GroundTruth(int(g["category_id"]), Box(*map(float, g["xyxy"]))) for g in m["ground_truth"]]
        scene = Scene(
            image_id=int(m["image_id"]),
            width=int(m["width"]),
            height=int(m["height"]),
            ground_truth=gts,
            num_classes=int(m["num_classes"]),
            stride=int(m["stride"]),
            levels=[LevelSpec(lv["level_id"], int(lv["stride"])) for lv in m.get("levels", [])],
            keypoint_scores=[tuple(s) for s in m.get("keypoint_scores", [])],
            noise=list(m.get("noise", [])),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise GridFormatError(f"{path}: malformed manifest field ({exc!r})") from None
    if load_grids:
        for name, fname in m.get("grids", {}).items():
            scene.grids[name] = load_grid(d / fname)
        for lv in m.get("levels", []):
            scene.level_grids[lv["level_id"]] = {n: load_grid(d / f) for n, f in lv.get("grids", {}).items()}
    return scene
