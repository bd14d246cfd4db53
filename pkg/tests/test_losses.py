from __future__ import annotations

import math

import numpy as np
import pytest

from oracles import finite_diff
from tripletdet.errors import ContractError
from tripletdet.losses import (
    LossValue,
    LossWeightsMR,
    LossWeightsSR,
    focal_heatmap_loss,
    giou_loss,
    offset_loss,
    pull_push_loss,
    total_loss_mr,
    total_loss_sr,
)
from tripletdet.records import Box
from tripletdet.synth import SceneSpec, generate_scene

POINTS = 100
REL = 1e-4


def rel_err(g, fd):
    g, fd = np.ravel(g), np.ravel(fd)
    return np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-6)


# -- focal ---------------------------------------------------------------


def test_focal_single_cell():
    v = focal_heatmap_loss(np.array([[[0.5]]]), np.array([[[1.0]]])).value
    assert v == pytest.approx(-0.25 * math.log(0.5), abs=1e-15)
    assert v == pytest.approx(0.1733, abs=1e-4)


def test_focal_perfect_prediction_limit():
    t = np.zeros((1, 6, 6))
    t[0, 2, 3] = t[0, 4, 1] = 1.0
    values = []
    for eps in (1e-2, 1e-4, 1e-6):
        p = np.where(t == 1.0, 1 - eps, eps)
        values.append(focal_heatmap_loss(p, t).value)
    assert values[0] > values[1] > values[2] >= 0
    assert values[2] < 1e-10


def test_focal_contract():
    with pytest.raises(ContractError):
        focal_heatmap_loss(np.ones((1, 2, 2)) * 0.5, np.zeros((1, 2, 3)))
    with pytest.raises(ContractError):
        focal_heatmap_loss(np.array([0.0, 0.5]), np.array([0.0, 1.0]))


def test_focal_empty_target_normalizes_by_one():
    p = np.full((1, 2, 2), 0.1)
    v = focal_heatmap_loss(p, np.zeros((1, 2, 2))).value
    assert v == pytest.approx(-4 * 0.01 * math.log(0.9))


def test_focal_gradient(rng):
    worst = 0.0
    for _ in range(POINTS):
        t = rng.uniform(0, 1, (8, 8)) ** 3
        t[rng.uniform(size=(8, 8)) < 0.1] = 1.0
        p = rng.uniform(0.05, 0.95, (8, 8))
        g = focal_heatmap_loss(p, t).gradient
        fd = finite_diff(lambda x: focal_heatmap_loss(x, t).value, p)
        worst = max(worst, rel_err(g, fd))
    assert worst <= REL


# -- pull / push -----------------------------------------------------------


def test_pull_push_examples():
    pull, push = pull_push_loss(np.array([[0.3, 0.3], [2.0, 2.0]]))
    assert pull.value == 0.0
    _, push = pull_push_loss(np.array([[0.0, 0.0], [1.0, 1.0]]))
    assert push.value == 0.0
    _, push = pull_push_loss(np.array([[0.0, 0.0], [0.5, 0.5]]))
    assert push.value == pytest.approx(0.5)
    pull, push = pull_push_loss(np.zeros((0, 2)))
    assert pull.value == push.value == 0.0
    pull, push = pull_push_loss(np.array([[0.0, 1.0]]))
    assert pull.value == pytest.approx(0.5) and push.value == 0.0


def test_pull_push_gradients(rng):
    checked = 0
    while checked < POINTS:
        n = int(rng.integers(2, 6))
        e = rng.uniform(-1.5, 1.5, (n, 2))
        m = e.mean(axis=1)
        gaps = np.abs(np.abs(m[:, None] - m[None, :]) - 1.0)
        if gaps.min() < 1e-3:
            continue  # hinge kink
        pull, push = pull_push_loss(e)
        assert rel_err(pull.gradient, finite_diff(lambda x: pull_push_loss(x)[0].value, e)) <= REL
        fd = finite_diff(lambda x: pull_push_loss(x)[1].value, e)
        assert np.linalg.norm(push.gradient - fd) <= REL * max(np.linalg.norm(fd), 1.0)
        checked += 1


# -- offsets ---------------------------------------------------------------


def test_offset_examples():
    assert offset_loss(np.array([0.3]), np.array([0.3])).value == 0.0
    assert offset_loss(np.array([0.5]), np.array([0.0])).value == 0.125
    assert offset_loss(np.array([2.0]), np.array([0.0])).value == 1.5
    assert offset_loss(np.array([2.0]), np.array([0.0]), smooth=False).value == 2.0
    with pytest.raises(ContractError):
        offset_loss(np.zeros(2), np.zeros(3))


@pytest.mark.parametrize("smooth", [True, False])
def test_offset_gradient(rng, smooth):
    checked = 0
    while checked < POINTS:
        p, t = rng.uniform(-3, 3, (2, 5, 2))
        d = np.abs(p - t)
        if np.min(np.abs(d - 1.0)) < 1e-3 or d.min() < 1e-3:
            continue
        g = offset_loss(p, t, smooth).gradient
        assert rel_err(g, finite_diff(lambda x: offset_loss(x, t, smooth).value, p)) <= REL
        checked += 1


# -- giou ------------------------------------------------------------------


def test_giou_examples():
    b = Box(1.5, 2, 7, 9)
    assert giou_loss(b, b).value == 0.0
    assert giou_loss(Box(0, 0, 1, 1), Box(2, 0, 3, 1)).value == pytest.approx(4 / 3, abs=1e-15)
    with pytest.raises(ContractError):
        giou_loss(Box(0, 0, 0, 1), Box(0, 0, 1, 1))


def test_giou_range_and_zero_only_when_equal(rng):
    for _ in range(200):
        a = rng.uniform(0, 10, 2)
        b = rng.uniform(0, 10, 2)
        pa = Box(a[0], a[1], a[0] + rng.uniform(0.1, 5), a[1] + rng.uniform(0.1, 5))
        pb = Box(b[0], b[1], b[0] + rng.uniform(0.1, 5), b[1] + rng.uniform(0.1, 5))
        v = giou_loss(pa, pb).value
        assert 0.0 < v <= 2.0


def _kinky(p, t):
    x1, y1, x2, y2 = p
    a1, b1, a2, b2 = t
    diffs = [x1 - a1, x2 - a2, y1 - b1, y2 - b2, x2 - a1, a2 - x1, y2 - b1, b2 - y1]
    return min(abs(d) for d in diffs) < 1e-3


def test_giou_gradient(rng):
    checked = 0
    while checked < POINTS:
        t = rng.uniform(0, 10, 2)
        t = np.array([t[0], t[1], t[0] + rng.uniform(0.5, 6), t[1] + rng.uniform(0.5, 6)])
        p = t + rng.uniform(-3, 3, 4)
        if p[2] - p[0] < 0.1 or p[3] - p[1] < 0.1 or _kinky(p, t):
            continue
        tb = Box(*t)
        g = giou_loss(Box(*p), tb).gradient
        fd = finite_diff(lambda x: giou_loss(Box(*x), tb).value, p)
        assert rel_err(g, fd) <= REL
        checked += 1


# -- totals ----------------------------------------------------------------

SR = ("kp_co", "kp_ce", "pull", "push", "off_co", "off_ce")
MR = ("cls_tl", "cls_br", "reg_tl", "reg_br", "kp_co", "kp_ce", "off_co", "off_ce")


def test_total_sr_fixtures():
    assert total_loss_sr(dict.fromkeys(SR, 0.0)).value == 0.0
    assert abs(total_loss_sr(dict.fromkeys(SR, 1.0)).value - 4.2) <= 1e-9
    base = total_loss_sr(dict.fromkeys(SR, 1.0)).value
    doubled = total_loss_sr(dict.fromkeys(SR, 1.0), LossWeightsSR(gamma=2.0)).value
    assert doubled - base == pytest.approx(2.0)
    with pytest.raises(ContractError, match="push"):
        total_loss_sr({k: 1.0 for k in SR if k != "push"})


def test_total_mr_fixtures():
    assert total_loss_mr(dict.fromkeys(MR, 0.0)).value == 0.0
    assert abs(total_loss_mr(dict.fromkeys(MR, 1.0)).value - 5.5) <= 1e-9
    assert total_loss_mr(dict.fromkeys(MR, 3.0)).value == pytest.approx(16.5)
    with pytest.raises(ContractError, match="reg_br"):
        total_loss_mr({k: 1.0 for k in MR if k != "reg_br"})


def test_total_linearity_and_gradients(rng):
    comps = {k: float(rng.uniform()) for k in SR}
    w = LossWeightsSR(0.3, 0.7, 2.0)
    total = total_loss_sr(comps, w).value
    expected = comps["kp_co"] + comps["kp_ce"] + 0.3 * comps["pull"] + 0.7 * comps["push"] + 2.0 * (
        comps["off_co"] + comps["off_ce"])
    assert total == pytest.approx(expected, abs=1e-12)
    grad = np.ones(3)
    withgrad = {k: LossValue(v, grad) for k, v in comps.items()}
    out = total_loss_sr(withgrad, w)
    assert np.array_equal(out.gradient["push"], 0.7 * grad)
    mr = total_loss_mr({k: LossValue(1.0, grad) for k in MR}, LossWeightsMR())
    assert np.array_equal(out.gradient["kp_co"], grad)
    assert np.array_equal(mr.gradient["reg_tl"], grad) and np.array_equal(mr.gradient["cls_br"], 0.5 * grad)


# -- oracle targets ----------------------------------------------------------


def test_losses_vanish_on_oracle_targets():
    scene = generate_scene(SceneSpec(seed=4, box_count=(3, 3)))
    g = scene.grids
    tl_emb = [g["tl_embed"].array[0][g["tl_heat"].array.max(axis=0) == 1.0]]
    br_emb = [g["br_embed"].array[0][g["br_heat"].array.max(axis=0) == 1.0]]
    pairs = np.stack([np.sort(tl_emb[0]), np.sort(br_emb[0])], axis=1)
    pull, push = pull_push_loss(pairs)
    assert pull.value <= 1e-6 and push.value <= 1e-6
    off = g["tl_off"].array
    assert offset_loss(off, off).value == 0.0
    for gt in scene.ground_truth:
        assert giou_loss(gt.box, gt.box).value <= 1e-6


def test_focal_on_gaussian_targets_is_not_zero():
    """With soft Gaussian targets a perfect copy still pays the negative term,
    so the self-loss is a fixed positive number and only the binary-target
    limit goes to zero."""
    scene = generate_scene(SceneSpec(seed=4, box_count=(3, 3)))
    t = scene.grids["tl_heat"].array.astype(np.float64)
    eps = 1e-4
    p = np.clip(t, eps, 1 - eps)
    v = focal_heatmap_loss(p, t).value
    neg = (t < 1.0)
    ref = -np.sum(((1 - t) ** 4 * p**2 * np.log(1 - p))[neg]) - np.sum(((1 - p) ** 2 * np.log(p))[~neg])
    assert v == pytest.approx(ref / max((~neg).sum(), 1), rel=1e-12)
    assert v > 1e-6
