# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Signatures mirror :mod:`tripletdet._pykernels`."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()

cdef enum:
    LEFT = 0
    RIGHT = 1
    TOP = 2
    BOTTOM = 3


def scan_max(const float[:, ::1] src, int direction):
    cdef Py_ssize_t H = src.shape[0], W = src.shape[1], i, j
    out_arr = np.empty((H, W), dtype=np.float32)
    cdef float[:, ::1] out = out_arr
    cdef float run
    with nogil:
        if direction == LEFT:
            for i in range(H):
                run = src[i, 0]
                for j in range(W):
                    if src[i, j] > run:
                        run = src[i, j]
                    out[i, j] = run
        elif direction == RIGHT:
            for i in range(H):
                run = src[i, W - 1]
                for j in range(W - 1, -1, -1):
                    if src[i, j] > run:
                        run = src[i, j]
                    out[i, j] = run
        elif direction == TOP:
            for j in range(W):
                out[0, j] = src[0, j]
            for i in range(1, H):
                for j in range(W):
                    out[i, j] = src[i, j] if src[i, j] > out[i - 1, j] else out[i - 1, j]
        else:
            for j in range(W):
                out[H - 1, j] = src[H - 1, j]
            for i in range(H - 2, -1, -1):
                for j in range(W):
                    out[i, j] = src[i, j] if src[i, j] > out[i + 1, j] else out[i + 1, j]
    return out_arr


def peak_mask(const float[:, :, ::1] heat, int window, float floor):
    cdef Py_ssize_t C = heat.shape[0], H = heat.shape[1], W = heat.shape[2]
    cdef Py_ssize_t c, i, j, ni, nj, lo, hi, jlo, jhi
    cdef Py_ssize_t r = window // 2
    cdef float v, m
    cdef bint ok
    cdef const float* plane
    cdef const float* src
    cdef float* rm
    cdef cnp.npy_bool* out
    mask_arr = np.zeros((C, H, W), dtype=np.bool_)
    row_arr = np.empty((H, W), dtype=np.float32)
    cdef cnp.npy_bool[:, :, ::1] mask = mask_arr
    cdef float[:, ::1] rowmax = row_arr
    if C == 0 or H == 0 or W == 0:
        return mask_arr
    rm = &rowmax[0, 0]
    with nogil:
        for c in range(C):
            plane = &heat[c, 0, 0]
            out = &mask[c, 0, 0]
            # separable window max: horizontal pass into rm, vertical pass below
            for i in range(H):
                src = plane + i * W
                for j in range(W):
                    jlo = j - r if j >= r else 0
                    jhi = j + r if j + r < W else W - 1
                    m = src[jlo]
                    for nj in range(jlo + 1, jhi + 1):
                        if src[nj] > m:
                            m = src[nj]
                    rm[i * W + j] = m
            for i in range(H):
                lo = i - r if i >= r else 0
                hi = i + r if i + r < H else H - 1
                src = plane + i * W
                for j in range(W):
                    v = src[j]
                    if not (v > floor):
                        continue
                    ok = True
                    for ni in range(lo, hi + 1):
                        if rm[ni * W + j] > v:
                            ok = False
                            break
                    if not ok:
                        continue
                    # v is the window max; an equal cell earlier in row-major order wins
                    jlo = j - r if j >= r else 0
                    jhi = j + r if j + r < W else W - 1
                    for ni in range(lo, i + 1):
                        for nj in range(jlo, (jhi + 1) if ni < i else j):
                            if plane[ni * W + nj] == v:
                                ok = False
                                break
                        if not ok:
                            break
                    out[i * W + j] = ok
    return mask_arr


def pair_corners(const long long[::1] tl_cls, const double[::1] tl_x, const double[::1] tl_y,
                 const double[::1] tl_emb, const long long[::1] br_cls, const double[::1] br_x,
                 const double[::1] br_y, const double[::1] br_emb, double threshold, bint use_embedding):
    cdef Py_ssize_t nt = tl_x.shape[0], nb = br_x.shape[0], a, b, k = 0
    ti_arr = np.empty(nt * nb, dtype=np.int64)
    bi_arr = np.empty(nt * nb, dtype=np.int64)
    cdef long long[::1] ti = ti_arr
    cdef long long[::1] bi = bi_arr
    cdef double d
    with nogil:
        for a in range(nt):
            for b in range(nb):
                if tl_cls[a] != br_cls[b]:
                    continue
                if not (tl_x[a] < br_x[b] and tl_y[a] < br_y[b]):
                    continue
                if use_embedding:
                    d = tl_emb[a] - br_emb[b]
                    if d < 0:
                        d = -d
                    if not (d < threshold):
                        continue
                ti[k] = a
                bi[k] = b
                k += 1
    return ti_arr[:k], bi_arr[:k]


cdef inline int _pick_n(double x1, double y1, double x2, double y2,
                        int n_small, int n_large, double split) nogil:
    cdef double w = x2 - x1, h = y2 - y1
    cdef double s = w if w > h else h
    return n_small if s < split else n_large


def best_center(const double[::1] x1, const double[::1] y1, const double[::1] x2, const double[::1] y2,
                const long long[::1] cls, const long long[::1] ct_cls, const double[::1] ct_x,
                const double[::1] ct_y, const double[::1] ct_score,
                int n_small, int n_large, double split):
    cdef Py_ssize_t m = x1.shape[0], nc = ct_x.shape[0], k, c
    out_arr = np.full(m, -1, dtype=np.int64)
    cdef long long[::1] out = out_arr
    cdef int n
    cdef double rx1, ry1, rx2, ry2, best
    with nogil:
        for k in range(m):
            n = _pick_n(x1[k], y1[k], x2[k], y2[k], n_small, n_large, split)
            rx1 = ((n + 1) * x1[k] + (n - 1) * x2[k]) / (2.0 * n)
            ry1 = ((n + 1) * y1[k] + (n - 1) * y2[k]) / (2.0 * n)
            rx2 = ((n - 1) * x1[k] + (n + 1) * x2[k]) / (2.0 * n)
            ry2 = ((n - 1) * y1[k] + (n + 1) * y2[k]) / (2.0 * n)
            best = -1.0
            for c in range(nc):
                if ct_cls[c] != cls[k]:
                    continue
                if rx1 <= ct_x[c] <= rx2 and ry1 <= ct_y[c] <= ry2 and ct_score[c] > best:
                    best = ct_score[c]
                    out[k] = c
    return out_arr


def region_contains(const double[::1] x1, const double[::1] y1, const double[::1] x2, const double[::1] y2,
                    const double[::1] px, const double[::1] py, int n_small, int n_large, double split):
    cdef Py_ssize_t m = x1.shape[0], k
    out_arr = np.zeros(m, dtype=np.bool_)
    cdef cnp.npy_bool[::1] out = out_arr
    cdef int n
    cdef double rx1, ry1, rx2, ry2
    with nogil:
        for k in range(m):
            n = _pick_n(x1[k], y1[k], x2[k], y2[k], n_small, n_large, split)
            rx1 = ((n + 1) * x1[k] + (n - 1) * x2[k]) / (2.0 * n)
            ry1 = ((n + 1) * y1[k] + (n - 1) * y2[k]) / (2.0 * n)
            rx2 = ((n - 1) * x1[k] + (n + 1) * x2[k]) / (2.0 * n)
            ry2 = ((n - 1) * y1[k] + (n + 1) * y2[k]) / (2.0 * n)
            out[k] = rx1 <= px[k] <= rx2 and ry1 <= py[k] <= ry2
    return out_arr


cdef inline double _iou(double ax1, double ay1, double ax2, double ay2,
                        double bx1, double by1, double bx2, double by2) nogil:
    cdef double iw = (ax2 if ax2 < bx2 else bx2) - (ax1 if ax1 > bx1 else bx1)
    cdef double ih = (ay2 if ay2 < by2 else by2) - (ay1 if ay1 > by1 else by1)
    cdef double aa, ab, inter, union
    if iw <= 0 or ih <= 0:
        return 0.0
    aa = (ax2 - ax1) * (ay2 - ay1)
    ab = (bx2 - bx1) * (by2 - by1)
    if aa <= 0 or ab <= 0:
        return 0.0
    inter = iw * ih
    union = aa + ab - inter
    return inter / union


def soft_nms(const double[::1] x1, const double[::1] y1, const double[::1] x2, const double[::1] y2,
             const double[::1] scores, int method, double sigma, double threshold, double prune):
    cdef Py_ssize_t n = x1.shape[0], step, k, best
    s_arr = np.array(scores, dtype=np.float64)
    alive_arr = np.ones(n, dtype=np.bool_)
    order_arr = np.empty(n, dtype=np.int64)
    cdef double[::1] s = s_arr
    cdef cnp.npy_bool[::1] alive = alive_arr
    cdef long long[::1] order = order_arr
    cdef Py_ssize_t count = 0
    cdef double ov, bs
    with nogil:
        for k in range(n):
            if s[k] < prune:
                alive[k] = False
        for step in range(n):
            best = -1
            bs = -1.0
            for k in range(n):
                if alive[k] and s[k] > bs:
                    bs = s[k]
                    best = k
            if best < 0:
                break
            alive[best] = False
            order[count] = best
            count += 1
            for k in range(n):
                if not alive[k]:
                    continue
                ov = _iou(x1[best], y1[best], x2[best], y2[best], x1[k], y1[k], x2[k], y2[k])
                if method == 0:
                    s[k] = s[k] * exp(-(ov * ov) / sigma)
                elif ov > threshold:
                    s[k] = s[k] * (1.0 - ov)
                if s[k] < prune:
                    alive[k] = False
    return order_arr[:count], s_arr


def nms(const double[::1] x1, const double[::1] y1, const double[::1] x2, const double[::1] y2,
        double threshold):
    cdef Py_ssize_t n = x1.shape[0], a, b, count = 0
    dead_arr = np.zeros(n, dtype=np.bool_)
    keep_arr = np.empty(n, dtype=np.int64)
    cdef cnp.npy_bool[::1] dead = dead_arr
    cdef long long[::1] keep = keep_arr
    with nogil:
        for a in range(n):
            if dead[a]:
                continue
            keep[count] = a
            count += 1
            for b in range(a + 1, n):
                if not dead[b] and _iou(x1[a], y1[a], x2[a], y2[a], x1[b], y1[b], x2[b], y2[b]) >= threshold:
                    dead[b] = True
    return keep_arr[:count]
