"""Numba-compiled implementations of the hot tracking kernels.

Mirrors numpy_impl function-for-function; loops here compile to native
code, which is what makes per-frame tracking cheap on long sequences.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_VAR_FLOOR = 1e-12


@njit(cache=True, inline="always")
def _bilinear(img, x, y):
    x0 = int(np.floor(x))
    y0 = int(np.floor(y))
    fx = x - x0
    fy = y - y0
    return (
        img[y0, x0] * (1.0 - fx) * (1.0 - fy)
        + img[y0, x0 + 1] * fx * (1.0 - fy)
        + img[y0 + 1, x0] * (1.0 - fx) * fy
        + img[y0 + 1, x0 + 1] * fx * fy
    )


@njit(cache=True)
def lk_refine_level(prev, nxt, pts, guess, half_win, max_iter, eps, min_eig_floor):
    h, w_img = prev.shape
    n = pts.shape[0]
    d = guess.copy()
    ok = np.ones(n, dtype=np.bool_)
    side = 2 * half_win + 1
    area = float(side * side)
    tmpl = np.empty((side, side))
    grad_x = np.empty((side, side))
    grad_y = np.empty((side, side))

    for i in range(n):
        px = pts[i, 0]
        py = pts[i, 1]
        margin = half_win + 1
        if not (
            px - margin >= 0.0
            and px + margin <= w_img - 2.0
            and py - margin >= 0.0
            and py + margin <= h - 2.0
        ):
            ok[i] = False
            continue

        gxx = 0.0
        gxy = 0.0
        gyy = 0.0
        for r in range(side):
            for c in range(side):
                sx = px + (c - half_win)
                sy = py + (r - half_win)
                tmpl[r, c] = _bilinear(prev, sx, sy)
                ix = 0.5 * (_bilinear(prev, sx + 1.0, sy) - _bilinear(prev, sx - 1.0, sy))
                iy = 0.5 * (_bilinear(prev, sx, sy + 1.0) - _bilinear(prev, sx, sy - 1.0))
                grad_x[r, c] = ix
                grad_y[r, c] = iy
                gxx += ix * ix
                gxy += ix * iy
                gyy += iy * iy

        tr = gxx + gyy
        det = gxx * gyy - gxy * gxy
        disc = tr * tr - 4.0 * det
        if disc < 0.0:
            disc = 0.0
        lam_min = 0.5 * (tr - np.sqrt(disc))
        if lam_min < min_eig_floor * area or det <= 0.0:
            ok[i] = False
            continue

        dx = d[i, 0]
        dy = d[i, 1]
        for _ in range(max_iter):
            cx = px + dx
            cy = py + dy
            if not (
                cx - half_win >= 0.0
                and cx + half_win <= w_img - 2.0
                and cy - half_win >= 0.0
                and cy + half_win <= h - 2.0
            ):
                ok[i] = False
                break
            bx = 0.0
            by = 0.0
            for r in range(side):
                for c in range(side):
                    e = tmpl[r, c] - _bilinear(nxt, cx + (c - half_win), cy + (r - half_win))
                    bx += e * grad_x[r, c]
                    by += e * grad_y[r, c]
            nu_x = (gyy * bx - gxy * by) / det
            nu_y = (gxx * by - gxy * bx) / det
            dx += nu_x
            dy += nu_y
            if nu_x * nu_x + nu_y * nu_y < eps * eps:
                break
        d[i, 0] = dx
        d[i, 1] = dy
    return d, ok


@njit(cache=True)
def ncc_search(tmpl, image, cx, cy, radius):
    n = tmpl.shape[0]
    h, w_img = image.shape
    tmean = 0.0
    for r in range(n):
        for c in range(n):
            tmean += tmpl[r, c]
    tmean /= n * n
    t_ss = 0.0
    for r in range(n):
        for c in range(n):
            t_ss += (tmpl[r, c] - tmean) ** 2
    if t_ss <= _VAR_FLOOR:
        return 0.0, 0.0, -2.0, False

    tl_x = int(round(cx - (n - 1) / 2.0))
    tl_y = int(round(cy - (n - 1) / 2.0))
    x_lo = max(0, tl_x - radius)
    x_hi = min(w_img - n, tl_x + radius)
    y_lo = max(0, tl_y - radius)
    y_hi = min(h - n, tl_y + radius)
    if x_lo > x_hi or y_lo > y_hi:
        return 0.0, 0.0, -2.0, False

    area = float(n * n)
    best = -2.0
    best_x = -1
    best_y = -1
    found = False
    for y in range(y_lo, y_hi + 1):
        for x in range(x_lo, x_hi + 1):
            s = 0.0
            ss = 0.0
            num = 0.0
            for r in range(n):
                for c in range(n):
                    v = image[y + r, x + c]
                    s += v
                    ss += v * v
                    num += v * (tmpl[r, c] - tmean)
            var_w = ss - s * s / area
            if var_w <= _VAR_FLOOR:
                continue
            gamma = num / np.sqrt(var_w * t_ss)
            if gamma > best:
                best = gamma
                best_x = x
                best_y = y
                found = True
    if not found:
        return 0.0, 0.0, -2.0, False
    return best_x + (n - 1) / 2.0, best_y + (n - 1) / 2.0, best, True
