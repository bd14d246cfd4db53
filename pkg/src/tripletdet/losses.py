"""Training objectives as plain functions with hand-written gradients.

Nothing here trains anything; the functions pin down the loss forms and
weights so that oracle-rendered targets can be checked against them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .errors import ContractError
from .grid import DenseGrid
from .records import Box


@dataclass(frozen=True)
class LossWeightsSR:
    alpha: float = 0.1
    beta: float = 0.1
    gamma: float = 1.0


@dataclass(frozen=True)
class LossWeightsMR:
    alpha_hat: float = 2.0
    beta_hat: float = 0.25
    gamma_hat: float = 1.0


@dataclass
class LossValue:
    value: float
    gradient: Optional[object] = None


def _arr(x) -> np.ndarray:
    if isinstance(x, DenseGrid):
        return x.array.astype(np.float64)
    return np.asarray(x, dtype=np.float64)


def focal_heatmap_loss(pred, target) -> LossValue:
    """Penalty-reduced pixelwise focal loss (exponents 2 and 4).

    ``pred`` must lie strictly inside (0, 1); the caller clamps. Normalized
    by the number of cells whose target is exactly 1 (at least 1).
    """
    p, t = _arr(pred), _arr(target)
    if p.shape != t.shape:
        raise ContractError(f"focal loss: shape mismatch {p.shape} vs {t.shape}")
    if np.any((p <= 0) | (p >= 1)):
        raise ContractError("focal loss: predictions must lie strictly inside (0, 1)")
    pos = t == 1.0
    n = max(int(pos.sum()), 1)
    neg_w = (1.0 - t) ** 4
    lp, l1p = np.log(p), np.log1p(-p)
    per = np.where(pos, (1.0 - p) ** 2 * lp, neg_w * p**2 * l1p)
    value = -per.sum() / n
    dpos = -2.0 * (1.0 - p) * lp + (1.0 - p) ** 2 / p
    dneg = neg_w * (2.0 * p * l1p - p**2 / (1.0 - p))
    grad = -np.where(pos, dpos, dneg) / n
    return LossValue(float(value), grad)


def pull_push_loss(embeddings) -> tuple[LossValue, LossValue]:
    """Associative-embedding losses over per-object ``(e_tl, e_br)`` pairs.

    pull = mean over objects of squared deviations from the pair mean;
    push = mean over ordered pairs of distinct objects of
    ``max(0, 1 - |mean_k - mean_l|)``. Gradients have the input's (N, 2) shape.
    """
    e = _arr(embeddings).reshape(-1, 2)
    n = e.shape[0]
    if n == 0:
        z = np.zeros((0, 2))
        return LossValue(0.0, z), LossValue(0.0, z.copy())
    mean = e.mean(axis=1)
    dev = e - mean[:, None]
    pull = float((dev**2).sum() / n)
    # d/de_tl of (e_tl - m)^2 + (e_br - m)^2 with m the pair mean reduces to 2 * (e_tl - m)
    pull_grad = 2.0 * dev / n
    push_grad = np.zeros_like(e)
    push = 0.0
    if n >= 2:
        diff = mean[:, None] - mean[None, :]
        margin = 1.0 - np.abs(diff)
        active = (margin > 0) & ~np.eye(n, dtype=bool)
        denom = n * (n - 1)
        push = float(np.where(active, margin, 0.0).sum() / denom)
        # each unordered pair appears twice in the sum
        dmean = -2.0 * np.where(active, np.sign(diff), 0.0).sum(axis=1) / denom
        push_grad = np.repeat((0.5 * dmean)[:, None], 2, axis=1)
    return LossValue(pull, pull_grad), LossValue(push, push_grad)


def offset_loss(pred, target, smooth: bool = True) -> LossValue:
    """Smooth-l1 (or plain l1) summed over components, averaged over keypoints.

    Inputs are (K,) or (K, D) arrays sampled at ground-truth keypoint cells.
    """
    p, t = _arr(pred), _arr(target)
    if p.shape != t.shape:
        raise ContractError(f"offset loss: shape mismatch {p.shape} vs {t.shape}")
    k = max(p.shape[0] if p.ndim else 1, 1)
    d = p - t
    a = np.abs(d)
    if smooth:
        per = np.where(a < 1.0, 0.5 * d**2, a - 0.5)
        grad = np.where(a < 1.0, d, np.sign(d))
    else:
        per = a
        grad = np.sign(d)
    return LossValue(float(per.sum() / k), grad / k)


def giou_loss(pred: Box, target: Box) -> LossValue:
    """``1 - GIoU`` and its gradient with respect to the four predicted coordinates."""
    if not pred.is_valid():
        raise ContractError(f"giou loss: degenerate predicted box {pred}")
    if not target.is_valid():
        raise ContractError(f"giou loss: degenerate target box {target}")
    x1, y1, x2, y2 = pred.as_tuple()
    bx1, by1, bx2, by2 = target.as_tuple()
    w, h = x2 - x1, y2 - y1
    area_a = w * h
    area_b = (bx2 - bx1) * (by2 - by1)
    iw = min(x2, bx2) - max(x1, bx1)
    ih = min(y2, by2) - max(y1, by1)
    overlap = iw > 0 and ih > 0
    inter = iw * ih if overlap else 0.0
    union = area_a + area_b - inter
    cw = max(x2, bx2) - min(x1, bx1)
    ch = max(y2, by2) - min(y1, by1)
    c_area = cw * ch
    loss = 2.0 - inter / union - union / c_area

    d_area = np.array([-h, -w, h, w])
    if overlap:
        d_iw = np.array([-1.0 if x1 > bx1 else 0.0, 0.0, 1.0 if x2 < bx2 else 0.0, 0.0])
        d_ih = np.array([0.0, -1.0 if y1 > by1 else 0.0, 0.0, 1.0 if y2 < by2 else 0.0])
        d_inter = d_iw * ih + d_ih * iw
    else:
        d_inter = np.zeros(4)
    d_union = d_area - d_inter
    d_cw = np.array([-1.0 if x1 < bx1 else 0.0, 0.0, 1.0 if x2 > bx2 else 0.0, 0.0])
    d_ch = np.array([0.0, -1.0 if y1 < by1 else 0.0, 0.0, 1.0 if y2 > by2 else 0.0])
    d_c = d_cw * ch + d_ch * cw
    grad = -(d_inter * union - inter * d_union) / union**2 - (d_union * c_area - union * d_c) / c_area**2
    return LossValue(float(loss), grad)


SR_COMPONENTS = ("kp_co", "kp_ce", "pull", "push", "off_co", "off_ce")
MR_COMPONENTS = ("cls_tl", "cls_br", "reg_tl", "reg_br", "kp_co", "kp_ce", "off_co", "off_ce")


def _weighted(components: Mapping, coeffs: Mapping[str, float], what: str) -> LossValue:
    missing = [k for k in coeffs if k not in components]
    if missing:
        raise ContractError(f"{what}: missing component(s) {', '.join(missing)}")
    value = 0.0
    grads = {}
    for name, w in coeffs.items():
        comp = components[name]
        if isinstance(comp, LossValue):
            value += w * comp.value
            if comp.gradient is not None:
                grads[name] = w * np.asarray(comp.gradient, dtype=np.float64)
        else:
            value += w * float(comp)
    return LossValue(value, grads)


def total_loss_sr(components: Mapping, weights: LossWeightsSR = LossWeightsSR()) -> LossValue:
    """kp_co + kp_ce + alpha*pull + beta*push + gamma*(off_co + off_ce).

    The gradient is a dict of each component's gradient scaled by its weight.
    """
    coeffs = {"kp_co": 1.0, "kp_ce": 1.0, "pull": weights.alpha, "push": weights.beta,
              "off_co": weights.gamma, "off_ce": weights.gamma}
    return _weighted(components, coeffs, "total_loss_sr")


def total_loss_mr(components: Mapping, weights: LossWeightsMR = LossWeightsMR()) -> LossValue:
    """(cls_tl + cls_br)/2 + alpha_hat/2*(reg_tl + reg_br)
    + beta_hat*(kp_co + kp_ce) + gamma_hat*(off_co + off_ce)."""
    coeffs = {"cls_tl": 0.5, "cls_br": 0.5, "reg_tl": weights.alpha_hat / 2.0, "reg_br": weights.alpha_hat / 2.0,
              "kp_co": weights.beta_hat, "kp_ce": weights.beta_hat,
              "off_co": weights.gamma_hat, "off_ce": weights.gamma_hat}
    return _weighted(components, coeffs, "total_loss_mr")
