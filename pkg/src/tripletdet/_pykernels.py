"""Numpy implementations of the inner loops.

Every function returns bit-identical results to its counterpart in the
compiled ``_ckernels`` module; the test-suite checks this on random inputs.
"""

from __future__ import annotations

import math

import numpy as np

LEFT, RIGHT, TOP, BOTTOM = 0, 1, 2, 3


def scan_max(src: np.ndarray, direction: int) -> np.ndarray:
    if direction == LEFT:
        return np.maximum.accumulate(src, axis=1)
    if direction == RIGHT:
        return np.maximum.accumulate(src[:, ::-1], axis=1)[:, ::-1].copy()
    if direction == TOP:
        return np.maximum.accumulate(src, axis=0)
    return np.maximum.accumulate(src[::-1, :], axis=0)[::-1, :].copy()


def peak_mask(heat: np.ndarray, window: int, floor: float) -> np.ndarray:
    C, H, W = heat.shape
    r = window // 2
    pad = np.full((C, H + 2 * r, W + 2 * r), -np.inf, dtype=np.float32)
    pad[:, r : r + H, r : r + W] = heat
    # compared at grid precision, like the compiled kernel
    mask = heat > np.float32(floor)
    for di in range(-r, r + 1):
        for dj in range(-r, r + 1):
            if di == 0 and dj == 0:
                continue
            nb = pad[:, r + di : r + di + H, r + dj : r + dj + W]
            if di < 0 or (di == 0 and dj < 0):
                # neighbour precedes in row-major order: equal values lose
                mask &= heat > nb
            else:
                mask &= heat >= nb
    return mask


def pair_corners(tl_cls, tl_x, tl_y, tl_emb, br_cls, br_x, br_y, br_emb, threshold, use_embedding):
    ok = (tl_cls[:, None] == br_cls[None, :]) & (tl_x[:, None] < br_x[None, :]) & (tl_y[:, None] < br_y[None, :])
    if use_embedding:
        ok &= np.abs(tl_emb[:, None] - br_emb[None, :]) < threshold
    ti, bi = np.nonzero(ok)
    return ti.astype(np.int64), bi.astype(np.int64)


def _region(x1, y1, x2, y2, n_small, n_large, split):
    w = x2 - x1
    h = y2 - y1
    n = np.where(np.maximum(w, h) < split, n_small, n_large)
    two_n = 2.0 * n
    rx1 = ((n + 1) * x1 + (n - 1) * x2) / two_n
    ry1 = ((n + 1) * y1 + (n - 1) * y2) / two_n
    rx2 = ((n - 1) * x1 + (n + 1) * x2) / two_n
    ry2 = ((n - 1) * y1 + (n + 1) * y2) / two_n
    return rx1, ry1, rx2, ry2


def best_center(x1, y1, x2, y2, cls, ct_cls, ct_x, ct_y, ct_score, n_small, n_large, split):
    m = x1.shape[0]
    out = np.full(m, -1, dtype=np.int64)
    if m == 0 or ct_x.shape[0] == 0:
        return out
    rx1, ry1, rx2, ry2 = _region(x1, y1, x2, y2, n_small, n_large, split)
    inside = (
        (cls[:, None] == ct_cls[None, :])
        & (rx1[:, None] <= ct_x[None, :])
        & (ct_x[None, :] <= rx2[:, None])
        & (ry1[:, None] <= ct_y[None, :])
        & (ct_y[None, :] <= ry2[:, None])
    )
    scored = np.where(inside, ct_score[None, :], -1.0)
    best = np.argmax(scored, axis=1)  # first index among ties
    hit = inside.any(axis=1)
    out[hit] = best[hit]
    return out


def region_contains(x1, y1, x2, y2, px, py, n_small, n_large, split):
    rx1, ry1, rx2, ry2 = _region(x1, y1, x2, y2, n_small, n_large, split)
    return (rx1 <= px) & (px <= rx2) & (ry1 <= py) & (py <= ry2)


def _iou_one_to_many(x1, y1, x2, y2, a):
    iw = np.minimum(x2[a], x2) - np.maximum(x1[a], x1)
    ih = np.minimum(y2[a], y2) - np.maximum(y1[a], y1)
    area_a = (x2[a] - x1[a]) * (y2[a] - y1[a])
    area = (x2 - x1) * (y2 - y1)
    inter = iw * ih
    with np.errstate(divide="ignore", invalid="ignore"):
        ov = inter / (area_a + area - inter)
    valid = (iw > 0) & (ih > 0) & (area_a > 0) & (area > 0)
    return np.where(valid, ov, 0.0)


def soft_nms(x1, y1, x2, y2, scores, method, sigma, threshold, prune):
    s = np.array(scores, dtype=np.float64)
    alive = s >= prune
    order = []
    for _ in range(len(s)):
        cand = np.flatnonzero(alive)
        if cand.size == 0:
            break
        best = int(cand[np.argmax(s[cand])])
        alive[best] = False
        order.append(best)
        rest = np.flatnonzero(alive)
        if rest.size == 0:
            break
        ov = _iou_one_to_many(x1, y1, x2, y2, best)[rest]
        if method == 0:
            # math.exp matches the C library exp the compiled kernel uses
            decay = np.array([math.exp(-(v * v) / sigma) for v in ov])
            s[rest] = s[rest] * decay
        else:
            hit = ov > threshold
            s[rest[hit]] = s[rest[hit]] * (1.0 - ov[hit])
        alive[rest[s[rest] < prune]] = False
    return np.array(order, dtype=np.int64), s


def nms(x1, y1, x2, y2, threshold):
    n = x1.shape[0]
    dead = np.zeros(n, dtype=bool)
    keep = []
    for a in range(n):
        if dead[a]:
            continue
        keep.append(a)
        if a + 1 < n:
            ov = _iou_one_to_many(x1, y1, x2, y2, a)
            hit = ov >= threshold
            hit[: a + 1] = False
            dead |= hit
    return np.array(keep, dtype=np.int64)
