from __future__ import annotations

from tripletdet.records import DEFAULT_LEVELS, Box, GroundTruth
from tripletdet.scene import Scene
from tripletdet.synth import render_mr, render_sr


def make_scene(boxes, width=512, height=512, num_classes=3, image_id=1, scores=None, mr=True) -> Scene:
    """Render an oracle scene for explicit ``(class, (x1, y1, x2, y2))`` objects."""
    gts = [GroundTruth(c, Box(*xyxy)) for c, xyxy in boxes]
    scene = Scene(image_id, width, height, gts, num_classes, 4, list(DEFAULT_LEVELS),
                  scores or [(1.0, 1.0, 1.0)] * len(gts))
    scene.grids = render_sr(scene)
    if mr:
        scene.level_grids = render_mr(scene)
    return scene


def best_iou(box, gts):
    from oracles import iou

    return max((iou(box.as_tuple(), g.box.as_tuple()) for g in gts), default=0.0)
