"""Pure-numpy implementations of the hot tracking kernels.

Functionally equivalent to the numba backend; kept vectorized across
points/offsets so the fallback stays usable on long sequences.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_VAR_FLOOR = 1e-12


def _bilinear_windows(img: np.ndarray, cx: np.ndarray, cy: np.ndarray, half: int) -> np.ndarray:
    """Sample square windows of side 2*half+1 centered at float (cx, cy).

    Callers guarantee every sample position has full bilinear support.
    Returns (n, side, side).
    """
    offs = np.arange(-half, half + 1, dtype=np.float64)
    x = cx[:, None, None] + offs[None, None, :]
    y = cy[:, None, None] + offs[None, :, None]
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    fx = x - x0
    fy = y - y0
    p00 = img[y0, x0]
    p01 = img[y0, x0 + 1]
    p10 = img[y0 + 1, x0]
    p11 = img[y0 + 1, x0 + 1]
    return (
        p00 * (1.0 - fx) * (1.0 - fy)
        + p01 * fx * (1.0 - fy)
        + p10 * (1.0 - fx) * fy
        + p11 * fx * fy
    )


def lk_refine_level(
    prev: np.ndarray,
    nxt: np.ndarray,
    pts: np.ndarray,
    guess: np.ndarray,
    half_win: int,
    max_iter: int,
    eps: float,
    min_eig_floor: float,
) -> tuple[np.ndarray, np.ndarray]:
    """One pyramid level of iterative point displacement refinement.

    ``pts`` are (n, 2) positions in this level's coordinates, ``guess`` the
    incoming (n, 2) displacements. Returns refined displacements and a
    per-point validity flag; a point fails when its spatial structure is
    near-singular (min eigenvalue below ``min_eig_floor`` times the window
    area) or its window leaves the image.
    """
    h, w_img = prev.shape
    n = pts.shape[0]
    d = guess.astype(np.float64).copy()
    ok = np.ones(n, dtype=np.bool_)
    if n == 0:
        return d, ok
    side = 2 * half_win + 1
    area = float(side * side)
    gx, gy = pts[:, 0], pts[:, 1]

    margin = half_win + 1
    valid = (
        (gx - margin >= 0.0)
        & (gx + margin <= w_img - 2.0)
        & (gy - margin >= 0.0)
        & (gy + margin <= h - 2.0)
    )
    ok &= valid
    idx = np.nonzero(valid)[0]
    if idx.size == 0:
        return d, ok

    patch = _bilinear_windows(prev, gx[idx], gy[idx], half_win + 1)
    tmpl = patch[:, 1:-1, 1:-1]
    ix = 0.5 * (patch[:, 1:-1, 2:] - patch[:, 1:-1, :-2])
    iy = 0.5 * (patch[:, 2:, 1:-1] - patch[:, :-2, 1:-1])
    gxx = np.einsum("nij,nij->n", ix, ix)
    gxy = np.einsum("nij,nij->n", ix, iy)
    gyy = np.einsum("nij,nij->n", iy, iy)
    tr = gxx + gyy
    det = gxx * gyy - gxy * gxy
    lam_min = 0.5 * (tr - np.sqrt(np.maximum(tr * tr - 4.0 * det, 0.0)))
    textured = (lam_min >= min_eig_floor * area) & (det > 0.0)
    ok[idx] &= textured

    sel = np.nonzero(textured)[0]
    if sel.size == 0:
        return d, ok
    pid = idx[sel]  # indices into the full point set
    tmpl, ix, iy = tmpl[sel], ix[sel], iy[sel]
    gxx, gxy, gyy, det = gxx[sel], gxy[sel], gyy[sel], det[sel]
    dx = d[pid, 0].copy()
    dy = d[pid, 1].copy()
    alive = np.ones(pid.size, dtype=np.bool_)

    for _ in range(max_iter):
        cur = np.nonzero(alive)[0]
        if cur.size == 0:
            break
        px = gx[pid[cur]] + dx[cur]
        py = gy[pid[cur]] + dy[cur]
        inb = (
            (px - half_win >= 0.0)
            & (px + half_win <= w_img - 2.0)
            & (py - half_win >= 0.0)
            & (py + half_win <= h - 2.0)
        )
        out = cur[~inb]
        ok[pid[out]] = False
        alive[out] = False
        cur = cur[inb]
        if cur.size == 0:
            break
        win = _bilinear_windows(nxt, px[inb], py[inb], half_win)
        err = tmpl[cur] - win
        bx = np.einsum("nij,nij->n", err, ix[cur])
        by = np.einsum("nij,nij->n", err, iy[cur])
        nu_x = (gyy[cur] * bx - gxy[cur] * by) / det[cur]
        nu_y = (gxx[cur] * by - gxy[cur] * bx) / det[cur]
        dx[cur] += nu_x
        dy[cur] += nu_y
        conv = nu_x * nu_x + nu_y * nu_y < eps * eps
        alive[cur[conv]] = False

    d[pid, 0] = dx
    d[pid, 1] = dy
    return d, ok


def ncc_search(
    tmpl: np.ndarray,
    image: np.ndarray,
    cx: float,
    cy: float,
    radius: int,
) -> tuple[float, float, float, bool]:
    """Exhaustive zero-mean normalized cross-correlation over integer offsets.

    Candidate patch centers lie within ``radius`` of (cx, cy), clipped to
    the image. Returns (best_cx, best_cy, gamma, found); ``found`` is False
    when the template or every candidate has zero variance, or no candidate
    fits in the image. Ties resolve to the first candidate in row-major
    order.
    """
    n = tmpl.shape[0]
    h, w_img = image.shape
    tz = tmpl - tmpl.mean()
    t_ss = float(np.einsum("ij,ij->", tz, tz))
    if t_ss <= _VAR_FLOOR:
        return 0.0, 0.0, -2.0, False

    tl_x = int(round(cx - (n - 1) / 2.0))
    tl_y = int(round(cy - (n - 1) / 2.0))
    x_lo, x_hi = max(0, tl_x - radius), min(w_img - n, tl_x + radius)
    y_lo, y_hi = max(0, tl_y - radius), min(h - n, tl_y + radius)
    if x_lo > x_hi or y_lo > y_hi:
        return 0.0, 0.0, -2.0, False

    win = sliding_window_view(image, (n, n))[y_lo : y_hi + 1, x_lo : x_hi + 1]
    area = float(n * n)
    sums = np.einsum("yxij->yx", win)
    num = np.einsum("yxij,ij->yx", win, tz)
    ss = np.einsum("yxij,yxij->yx", win, win) - sums * sums / area
    valid = ss > _VAR_FLOOR
    if not valid.any():
        return 0.0, 0.0, -2.0, False
    gamma = np.where(valid, num / np.sqrt(np.where(valid, ss, 1.0) * t_ss), -2.0)
    flat = int(np.argmax(gamma))
    by, bx = divmod(flat, gamma.shape[1])
    return (
        x_lo + bx + (n - 1) / 2.0,
        y_lo + by + (n - 1) / 2.0,
        float(gamma[by, bx]),
        True,
    )
