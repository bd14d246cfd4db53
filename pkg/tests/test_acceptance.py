"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is printed in the pytest terminal
summary (and immediately, when run with ``-s``).
"""

from __future__ import annotations

import json
import time
from contextlib import contextmanager

import numpy as np
import pytest

import oracles
from helpers import best_iou, make_scene
from oracles import finite_diff
from tripletdet import Box, DecodeConfig, central_region, decode_mr
from tripletdet.cli import main
from tripletdet.losses import (
    focal_heatmap_loss,
    giou_loss,
    offset_loss,
    pull_push_loss,
    total_loss_mr,
    total_loss_sr,
)
from tripletdet.metrics import LOW_IOU_THRESHOLDS, Evaluator, af_rate, average_precision, evaluate, geometry_recall
from tripletdet.pooling import Corner, ScanDirection, cascade_corner_pool, center_pool, corner_pool, scan_max
from tripletdet.pipeline import decode_many, filter_is_subset, flatten
from tripletdet.records import Detection, GroundTruth
from tripletdet.synth import SceneSpec, corrupt_regression, generate_dataset, shift_regression

ASPECT_BINS = ("AR_5:1", "AR_6:1", "AR_7:1", "AR_8:1")


@contextmanager
def criterion(log, n, title):
    """Time the block and log a verdict; ``info`` collects measured values."""
    info = {}
    t0 = time.perf_counter()
    try:
        yield info
    except BaseException:
        verdict = "FAIL"
        raise
    else:
        verdict = "PASS"
    finally:
        extra = ", ".join(f"{k}={v}" for k, v in info.items())
        line = f"criterion {n}: {verdict}  {title}  [{time.perf_counter() - t0:.2f}s{'; ' + extra if extra else ''}]"
        log[n] = line
        print(line)


def gts_of(scenes):
    return {s.image_id: list(s.ground_truth) for s in scenes}


def fmt(v):
    return "None" if v is None else f"{v:.4f}"


@pytest.fixture(scope="module")
def clean_scenes():
    return generate_dataset(SceneSpec(seed=2024), 200)


# -- 1 -----------------------------------------------------------------------


def test_criterion_1_pooling_exactness(acceptance_log):
    rng = np.random.default_rng(1)
    cases = []
    for _ in range(1000):
        H, W = (int(v) for v in rng.integers(1, 33, 2))
        # coarse values so plateaus and ties are common
        a, b = (rng.integers(-4, 5, (H, W)) * np.float32(0.25) + (rng.uniform() < 0.5) *
                rng.standard_normal((H, W)) for _ in range(2))
        cases.append((a.astype(np.float32), b.astype(np.float32)))
    with criterion(acceptance_log, 1, "pooling equals brute force on 1000 grids up to 32x32") as info:
        t0 = time.perf_counter()
        outputs = []
        for a, b in cases:
            outputs.append((
                [scan_max(a, d).array[0] for d in ScanDirection],
                center_pool(a, b).array[0],
                [corner_pool(a, b, c).array[0] for c in Corner],
                [cascade_corner_pool(a, b, c).array[0] for c in Corner],
            ))
        elapsed = time.perf_counter() - t0
        info["pooling_s"] = f"{elapsed:.3f}"
        mismatches = 0
        for (a, b), (scans, cp, corners, cascades) in zip(cases, outputs):
            for d, got in zip(ScanDirection, scans):
                mismatches += not np.array_equal(got, oracles.mask_ray_max(a, int(d)))
            mismatches += not np.array_equal(cp, oracles.mask_center_pool(a, b))
            for c, got in zip(Corner, corners):
                mismatches += not np.array_equal(got, oracles.mask_corner_pool(a, b, c is Corner.TOP_LEFT))
            for c, got in zip(Corner, cascades):
                mismatches += not np.array_equal(got, oracles.mask_cascade_pool(a, b, c is Corner.TOP_LEFT))
        info["mismatches"] = mismatches
        assert mismatches == 0
        assert elapsed < 10.0


# -- 2 -----------------------------------------------------------------------


def test_criterion_2_central_region_algebra(acceptance_log):
    rng = np.random.default_rng(2)
    with criterion(acceptance_log, 2, "central region width = w/n, same center, n=1 is the box") as info:
        worst = 0.0
        for _ in range(10_000):
            x, y = rng.uniform(-1000, 1000, 2)
            w, h = rng.uniform(1e-3, 1000, 2)
            box = Box(x, y, x + w, y + h)
            for n in (1, 3, 5):
                r = central_region(box, n)
                cx, cy = box.center
                errs = (
                    abs((r.cbr_x - r.ctl_x) - box.width / n),
                    abs((r.cbr_y - r.ctl_y) - box.height / n),
                    abs((r.ctl_x + r.cbr_x) / 2 - cx),
                    abs((r.ctl_y + r.cbr_y) / 2 - cy),
                )
                worst = max(worst, *errs)
                if n == 1:
                    assert (r.ctl_x, r.ctl_y, r.cbr_x, r.cbr_y) == box.as_tuple()
        info["max_abs_err"] = f"{worst:.2e}"
        assert worst <= 1e-9


# -- 3 / 4 -------------------------------------------------------------------


def _round_trip(scenes, mode):
    report = evaluate(flatten(decode_many(scenes, mode)), gts_of(scenes))
    return report, {k: report.geometry[k] for k in ASPECT_BINS}


def test_criterion_3_sr_round_trip(acceptance_log, clean_scenes):
    with criterion(acceptance_log, 3, "single-resolution round trip on 200 scenes") as info:
        t0 = time.perf_counter()
        report, bins = _round_trip(clean_scenes, "sr")
        elapsed = time.perf_counter() - t0
        info.update(AP=fmt(report.AP), AF=fmt(report.AF), **{k: fmt(v) for k, v in bins.items()})
        assert max(len(s.ground_truth) for s in clean_scenes) <= 8
        assert report.AP >= 0.99
        assert report.AF <= 0.01
        assert all(v is not None and v >= 0.99 for v in bins.values())
        assert elapsed < 120.0


def test_criterion_4_mr_round_trip(acceptance_log, clean_scenes):
    with criterion(acceptance_log, 4, "multi-resolution round trip plus regression corruption") as info:
        t0 = time.perf_counter()
        report, bins = _round_trip(clean_scenes, "mr")
        elapsed = time.perf_counter() - t0
        info.update(AP=fmt(report.AP), AF=fmt(report.AF), **{k: fmt(v) for k, v in bins.items()})
        used = {lv.level_id for s in clean_scenes for lv in s.levels
                if s.level_grids[lv.level_id]["tl_cls"].array.max() > 0}
        info["levels"] = "/".join(sorted(used))
        assert len(used) >= 2
        assert report.AP >= 0.99
        assert report.AF <= 0.01
        assert all(v is not None and v >= 0.99 for v in bins.values())
        assert elapsed < 120.0

        # a constant 20 px error on the top-left corner vectors
        scene = shift_regression(make_scene([(0, (40, 40, 260, 240))]), "tl", 20.0, 0.0)
        raw = decode_mr(scene.grids, scene.level_grids, scene.levels, scene.stride, DecodeConfig(refine=False))
        fixed = decode_mr(scene.grids, scene.level_grids, scene.levels, scene.stride)
        raw_iou = max(best_iou(d.box, scene.ground_truth) for d in raw)
        fixed_iou = best_iou(fixed[0].box, scene.ground_truth)
        info["shift_iou"] = f"{raw_iou:.3f}->{fixed_iou:.3f}"
        assert raw_iou < 0.99 <= fixed_iou

        # random per-cell jitter on every level
        jitter = generate_dataset(SceneSpec(seed=77), 50)
        rng = np.random.default_rng(77)
        for s in jitter:
            corrupt_regression(s, 2.5, rng)
        results = decode_many(jitter, "mr")
        worst = min(
            max((best_iou(d.box, [g]) for d in r.detections), default=0.0)
            for s, r in zip(jitter, results) for g in s.ground_truth
        )
        info["jitter_min_iou"] = f"{worst:.4f}"
        assert worst >= 0.99


# -- 5 -----------------------------------------------------------------------


def test_criterion_5_center_filter_ablation(acceptance_log):
    scenes = generate_dataset(SceneSpec(seed=5, noise_pairs=5), 200)
    gts = gts_of(scenes)
    with criterion(acceptance_log, 5, "center filter with 5 spurious corner pairs per scene") as info:
        for mode in ("sr", "mr"):
            f = evaluate(flatten(decode_many(scenes, mode)), gts, geometry=False)
            u = evaluate(flatten(decode_many(scenes, mode, DecodeConfig(center_filter=False))), gts, geometry=False)
            drop = (u.AF5 - f.AF5) / u.AF5 if u.AF5 > 0 else 0.0
            info[mode] = f"AP {u.AP:.4f}->{f.AP:.4f} AF5 {u.AF5:.4f}->{f.AF5:.4f} (-{100 * drop:.0f}%)"
            assert u.AF5 > 0 and drop >= 0.30
            assert f.AP > u.AP
            assert all(filter_is_subset(s, mode, DecodeConfig()) for s in scenes)


# -- 6 -----------------------------------------------------------------------


def _rel(g, fd):
    return np.linalg.norm(np.ravel(g) - np.ravel(fd)) / max(np.linalg.norm(fd), 1e-6)


def _smooth_giou_point(rng):
    while True:
        t = rng.uniform(0, 10, 2)
        t = np.array([t[0], t[1], t[0] + rng.uniform(0.5, 6), t[1] + rng.uniform(0.5, 6)])
        p = t + rng.uniform(-3, 3, 4)
        if p[2] - p[0] < 0.1 or p[3] - p[1] < 0.1:
            continue
        x1, y1, x2, y2 = p
        a1, b1, a2, b2 = t
        if min(abs(d) for d in (x1 - a1, x2 - a2, y1 - b1, y2 - b2, x2 - a1, a2 - x1, y2 - b1, b2 - y1)) >= 1e-3:
            return p, Box(*t)


def _smooth_embedding_point(rng):
    while True:
        e = rng.uniform(-1.5, 1.5, (int(rng.integers(2, 6)), 2))
        m = e.mean(axis=1)
        if np.abs(np.abs(m[:, None] - m[None, :]) - 1.0).min() >= 1e-3:
            return e


def _smooth_offset_point(rng):
    while True:
        p, t = rng.uniform(-3, 3, (2, 5, 2))
        d = np.abs(p - t)
        if np.min(np.abs(d - 1.0)) >= 1e-3 and d.min() >= 1e-3:
            return p, t


def test_criterion_6_losses(acceptance_log):
    rng = np.random.default_rng(6)
    with criterion(acceptance_log, 6, "loss gradients, giou(b, b) = 0, weighted totals") as info:
        worst = {}

        def check(name, g, fd):
            worst[name] = max(worst.get(name, 0.0), _rel(g, fd))

        for _ in range(100):
            t = rng.uniform(0, 1, (6, 6)) ** 3
            t[rng.uniform(size=(6, 6)) < 0.1] = 1.0
            p = rng.uniform(0.05, 0.95, (6, 6))
            check("focal", focal_heatmap_loss(p, t).gradient, finite_diff(lambda x: focal_heatmap_loss(x, t).value, p))

            e = _smooth_embedding_point(rng)
            pull, push = pull_push_loss(e)
            check("pull", pull.gradient, finite_diff(lambda x: pull_push_loss(x)[0].value, e))
            fd = finite_diff(lambda x: pull_push_loss(x)[1].value, e)
            # push may be identically zero; measure against an absolute floor of 1
            worst["push"] = max(worst.get("push", 0.0),
                                np.linalg.norm(push.gradient - fd) / max(np.linalg.norm(fd), 1.0))

            p, t = _smooth_offset_point(rng)
            for smooth in (True, False):
                check(f"offset_{'smooth' if smooth else 'l1'}", offset_loss(p, t, smooth).gradient,
                      finite_diff(lambda x: offset_loss(x, t, smooth).value, p))

            p, tb = _smooth_giou_point(rng)
            check("giou", giou_loss(Box(*p), tb).gradient, finite_diff(lambda x: giou_loss(Box(*x), tb).value, p))

        info["max_rel_err"] = f"{max(worst.values()):.1e}"
        assert all(v <= 1e-4 for v in worst.values()), worst

        for _ in range(100):
            x, y = rng.uniform(-50, 50, 2)
            b = Box(x, y, x + rng.uniform(0.1, 80), y + rng.uniform(0.1, 80))
            assert giou_loss(b, b).value == 0.0

        sr = total_loss_sr(dict.fromkeys(("kp_co", "kp_ce", "pull", "push", "off_co", "off_ce"), 1.0)).value
        mr = total_loss_mr(dict.fromkeys(
            ("cls_tl", "cls_br", "reg_tl", "reg_br", "kp_co", "kp_ce", "off_co", "off_ce"), 1.0)).value
        info["totals"] = f"{sr:.12g}/{mr:.12g}"
        assert abs(sr - 4.2) <= 1e-9
        assert abs(mr - 5.5) <= 1e-9


# -- 7 -----------------------------------------------------------------------


def test_criterion_7_metrics(acceptance_log):
    def D(box, score, cls=0, image=1):
        return Detection(image, cls, Box(*box), score)

    gts = {1: [GroundTruth(0, Box(0, 0, 10, 10)), GroundTruth(0, Box(20, 20, 30, 30))]}
    dets = [D((0, 0, 10, 10), 0.9), D((50, 50, 60, 60), 0.8), D((20, 20, 30, 30), 0.7)]
    with criterion(acceptance_log, 7, "hand-traced AP, AF = 1 - AP, recall max_dets cutoff") as info:
        # precision 1 up to recall 0.5, then 2/3 up to recall 1
        expected = (51 + 50 * 2 / 3) / 101
        ap = average_precision(dets, gts, 0.5)
        info["AP50"] = f"{ap:.12f}"
        assert abs(ap - expected) <= 1e-9

        report = evaluate(dets, gts)
        ev = Evaluator(dets, gts)
        assert abs(report.AF - (1 - ev.ap_over(LOW_IOU_THRESHOLDS))) <= 1e-9
        for name, thr in (("AF5", 0.05), ("AF25", 0.25), ("AF50", 0.5)):
            assert abs(getattr(report, name) - (1 - average_precision(dets, gts, thr))) <= 1e-9
            assert abs(af_rate(dets, gts, "iou", thr) - (1 - average_precision(dets, gts, thr))) <= 1e-9

        target = {1: [GroundTruth(0, Box(0, 0, 500, 60))]}
        junk = [D((600 + k, 600, 610 + k, 610), 0.9, cls=k % 3) for k in range(1000)]
        hit = D((0, 0, 500, 60), 0.1, cls=2)
        beyond = geometry_recall(junk + [hit], target)["AR_8:1"]
        within = geometry_recall(junk[:-1] + [hit], target)["AR_8:1"]
        info["recall_1001st/1000th"] = f"{beyond}/{within}"
        assert beyond == 0.0 and within == 1.0


# -- 8 -----------------------------------------------------------------------


def test_criterion_8_thread_determinism(acceptance_log, tmp_path):
    data = tmp_path / "data"
    assert main(["synth", "--scenes", "40", "--seed", "8", "--noise-corners", "3", "--score-min", "0.5",
                 "-o", str(data)]) == 0
    with criterion(acceptance_log, 8, "decode and bench JSON identical for 1, 4 and 8 threads") as info:
        for mode in ("sr", "mr"):
            blobs = set()
            for t in (1, 4, 8):
                for cmd, extra in (("decode", []), ("bench", ["--repeat", "1"])):
                    out = tmp_path / f"{mode}-{cmd}-{t}"
                    assert main([cmd, str(data), "--mode", mode, "--threads", str(t), "-o", str(out)] + extra) == 0
                    blobs.add((out / "detections.json").read_bytes())
            count = len(json.loads(next(iter(blobs))))
            info[mode] = f"{count} dets, {len(blobs)} distinct"
            assert len(blobs) == 1 and count > 0
