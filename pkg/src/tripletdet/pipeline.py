"""Scene -> detections, with the stock suppression recipe per decode mode."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from .decode import DecodeConfig, StageTimer, decode_mr, decode_sr
from .errors import ConfigError
from .records import Detection
from .scene import Scene
from .suppress import Method, SuppressConfig, flip_merge, suppress, top_select
from .synth import flip_scene

MODES = ("sr", "mr")


def default_suppression(mode: str) -> SuppressConfig:
    """Soft-NMS then top-100 for single resolution; hard NMS at 0.6 for multi resolution."""
    if mode == "sr":
        return SuppressConfig(method=Method.SOFT_GAUSSIAN, sigma=0.5, top_n=100)
    if mode == "mr":
        return SuppressConfig(method=Method.HARD, iou_threshold=0.6, top_n=100)
    raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")


@dataclass
class DecodeResult:
    image_id: int
    detections: list[Detection]
    stages: dict[str, float] = field(default_factory=dict)


def raw_decode(scene: Scene, mode: str, cfg: DecodeConfig = DecodeConfig(), timer=None) -> list[Detection]:
    """Decoder output before suppression."""
    if mode == "sr":
        if not scene.has_sr:
            raise ConfigError(f"scene {scene.image_id} has no single-resolution grids")
        return decode_sr(scene.grids, scene.stride, cfg, scene.image_id, timer)
    if mode == "mr":
        if not scene.has_mr:
            raise ConfigError(f"scene {scene.image_id} has no multi-resolution grids")
        return decode_mr(scene.grids, scene.level_grids, scene.levels, scene.stride, cfg, scene.image_id, timer)
    raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")


def decode_scene(scene: Scene, mode: str = "sr", cfg: DecodeConfig = DecodeConfig(),
                 scfg: Optional[SuppressConfig] = None, flip: bool = False) -> DecodeResult:
    """Decode, optionally merge the mirrored view, suppress and keep the top N.

    ``flip`` re-renders the mirrored scene from its ground truth (injected
    noise is not mirrored) and merges its detections before suppression.
    """
    scfg = default_suppression(mode) if scfg is None else scfg
    timer = StageTimer()
    dets = raw_decode(scene, mode, cfg, timer)
    if flip:
        mirrored = raw_decode(flip_scene(scene), mode, cfg, timer)
        dets = flip_merge(dets, mirrored, scene.width)
    with timer.stage("nms"):
        dets = top_select(suppress(dets, scfg), scfg.top_n)
    return DecodeResult(scene.image_id, dets, timer.totals)


def decode_many(scenes, mode: str = "sr", cfg: DecodeConfig = DecodeConfig(),
                scfg: Optional[SuppressConfig] = None, flip: bool = False,
                threads: int = 1) -> list[DecodeResult]:
    """Decode scenes in parallel; results are always ordered by image_id."""
    scenes = list(scenes)

    def one(s):
        return decode_scene(s, mode, cfg, scfg, flip)

    if threads <= 1:
        results = [one(s) for s in scenes]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, scenes))
    return sorted(results, key=lambda r: r.image_id)


def flatten(results) -> list[Detection]:
    return [d for r in results for d in r.detections]


def timed_decode(scenes, mode, cfg, scfg, threads):
    """(results, wall seconds, summed per-stage seconds)."""
    t0 = time.perf_counter()
    results = decode_many(scenes, mode, cfg, scfg, threads=threads)
    wall = time.perf_counter() - t0
    stages: dict[str, float] = {}
    for r in results:
        for k, v in r.stages.items():
            stages[k] = stages.get(k, 0.0) + v
    return results, wall, stages


def filter_is_subset(scene: Scene, mode: str, cfg: DecodeConfig = DecodeConfig()) -> bool:
    """Whether every center-filtered candidate is also an unfiltered candidate.

    Compared on (class, box) since the filter rescores survivors.
    """
    kept = raw_decode(scene, mode, cfg.with_(center_filter=True))
    every = {(d.class_id, d.box) for d in raw_decode(scene, mode, cfg.with_(center_filter=False))}
    return all((d.class_id, d.box) in every for d in kept)
