"""Nostril-region tracking on gradient-magnitude maps.

Each quantized frame is converted to a gradient magnitude map; a square
region of interest is carried frame to frame by median point flow
(pyramidal Lucas-Kanade displacements filtered by forward-backward
error), and recovered by exhaustive normalized cross-correlation against
the last confidently tracked gradient template when too few points
survive.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import median_filter

from thermoresp import kernels
from thermoresp.errors import FormatError, PointLoss, RelocalizationFailed
from thermoresp.frames import ThermalFrame
from thermoresp.quantize import QuantRange, QuantizedImage, quantize, select_range

TRACKED = "tracked"
RELOCALIZED = "relocalized"
LOST = "lost"
_STATUSES = (TRACKED, RELOCALIZED, LOST)

# Pyramidal Lucas-Kanade constants; standard values, overridable per call.
KLT_WIN = 11
KLT_LEVELS = 3
KLT_MAX_ITER = 20
KLT_EPS = 0.01
KLT_MIN_EIG = 1e-4


@dataclass(frozen=True)
class Roi:
    """Axis-aligned square region: top-left corner plus side length, px."""

    x: float
    y: float
    size: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "size", float(self.size))
        if not (self.size > 0):
            raise ValueError("roi size must be positive")

    @property
    def center(self) -> tuple[float, float]:
        return self.x + self.size / 2.0, self.y + self.size / 2.0

    @classmethod
    def from_center(cls, cx: float, cy: float, size: float) -> "Roi":
        return cls(cx - size / 2.0, cy - size / 2.0, size)

    def inside(self, width: int, height: int) -> bool:
        return self.x >= 0 and self.y >= 0 and self.x + self.size <= width and self.y + self.size <= height

    def iou(self, other: "Roi") -> float:
        x0 = max(self.x, other.x)
        y0 = max(self.y, other.y)
        x1 = min(self.x + self.size, other.x + other.size)
        y1 = min(self.y + self.size, other.y + other.size)
        if x1 <= x0 or y1 <= y0:
            return 0.0
        inter = (x1 - x0) * (y1 - y0)
        union = self.size**2 + other.size**2 - inter
        return inter / union


@dataclass(frozen=True)
class TrackParams:
    """Tuning knobs of the tracker.

    ``fb_max`` is the per-point forward-backward rejection threshold in px
    (5 suits small close-range regions, 25 larger ones). ``search_radius``
    of None means twice the current box size. ``min_gamma`` is the
    correlation a re-localization match must reach to be accepted.
    ``fb_median_max`` (default fb_max / 5) declares the whole step
    unreliable when even the median round-trip error exceeds it, which is
    what separates genuine structure from luckily self-consistent noise.
    ``despeckle`` median-filters the quantized image 3x3 before the
    gradient map so isolated extreme pixels cannot seed false gradients.
    """

    fb_max: float = 5.0
    grid: int = 10
    min_points_frac: float = 0.5
    search_radius: float | None = None
    min_gamma: float = 0.5
    scale_clamp: tuple[float, float] | None = (0.9, 1.1)
    fb_median_max: float | None = None
    despeckle: bool = True

    def __post_init__(self):
        if not (self.fb_max > 0):
            raise ValueError("fb_max must be positive")
        if self.grid < 2:
            raise ValueError("grid must be at least 2 points per side")
        if not (0.0 < self.min_points_frac <= 1.0):
            raise ValueError("min_points_frac must lie in (0, 1]")

    @property
    def fb_median_gate(self) -> float:
        return self.fb_median_max if self.fb_median_max is not None else self.fb_max / 5.0


class GradientMap:
    """Gradient magnitude image with a memoized resolution pyramid."""

    def __init__(self, mag: np.ndarray):
        mag = np.ascontiguousarray(mag, dtype=np.float64)
        if mag.ndim != 2:
            raise ValueError("gradient map must be 2-D")
        if mag.size and mag.min() < 0:
            raise ValueError("gradient magnitude cannot be negative")
        self.mag = mag
        self._pyramids: dict[int, list[np.ndarray]] = {}

    @property
    def width(self) -> int:
        return self.mag.shape[1]

    @property
    def height(self) -> int:
        return self.mag.shape[0]

    def pyramid(self, levels: int) -> list[np.ndarray]:
        pyr = self._pyramids.get(levels)
        if pyr is None:
            pyr = [self.mag]
            for _ in range(levels - 1):
                pyr.append(_downsample2(pyr[-1]))
            self._pyramids[levels] = pyr
        return pyr


def _downsample2(a: np.ndarray) -> np.ndarray:
    """Binomial [1,2,1]/4 blur along both axes, then drop every other pixel."""
    p = np.pad(a, ((1, 1), (0, 0)), mode="edge")
    b = 0.25 * (p[:-2] + 2.0 * p[1:-1] + p[2:])
    p = np.pad(b, ((0, 0), (1, 1)), mode="edge")
    c = 0.25 * (p[:, :-2] + 2.0 * p[:, 1:-1] + p[:, 2:])
    return np.ascontiguousarray(c[::2, ::2])


def gradient_magnitude(q: QuantizedImage) -> GradientMap:
    """Euclidean norm of the per-axis central differences of the image.

    Interior pixels use (u[i+1] - u[i-1]) / 2; borders fall back to
    one-sided differences. Constant images map to all zeros.
    """
    u = q.pixels.astype(np.float64)
    gy, gx = np.gradient(u)
    return GradientMap(np.hypot(gx, gy))


def klt_track(
    prev: GradientMap,
    nxt: GradientMap,
    pts,
    win: int = KLT_WIN,
    levels: int = KLT_LEVELS,
    max_iter: int = KLT_MAX_ITER,
    eps: float = KLT_EPS,
    min_eig: float = KLT_MIN_EIG,
) -> tuple[np.ndarray, np.ndarray]:
    """Pyramidal point displacement from ``prev`` to ``nxt``.

    Returns ``(new_pts, ok)``. A point is flagged not-ok when its window
    has a near-singular structure tensor or drifts out of the frame at
    full resolution; failures at coarser levels merely discard that
    level's refinement.
    """
    pts = np.ascontiguousarray(np.atleast_2d(np.asarray(pts, dtype=np.float64)))
    half = win // 2
    pyr_prev = prev.pyramid(levels)
    pyr_next = nxt.pyramid(levels)
    n = pts.shape[0]
    d = np.zeros((n, 2), dtype=np.float64)
    ok = np.ones(n, dtype=np.bool_)
    for level in range(levels - 1, -1, -1):
        pts_level = np.ascontiguousarray(pts / float(2**level))
        before = d.copy()
        d, ok_level = kernels.lk_refine_level(
            pyr_prev[level], pyr_next[level], pts_level, np.ascontiguousarray(d),
            half, max_iter, eps, min_eig,
        )
        if level > 0:
            d = np.where(ok_level[:, None], d, before) * 2.0
        else:
            ok &= ok_level
    return pts + d, ok


def _forward_backward(prev: GradientMap, nxt: GradientMap, pts: np.ndarray, **kw):
    fwd, ok_f = klt_track(prev, nxt, pts, **kw)
    back, ok_b = klt_track(nxt, prev, fwd, **kw)
    err = np.hypot(pts[:, 0] - back[:, 0], pts[:, 1] - back[:, 1])
    err[~(ok_f & ok_b)] = np.inf
    return fwd, ok_f, err


def fb_error(maps: list[GradientMap], pts, **kw) -> np.ndarray:
    """Forward-then-backward round-trip distance per point.

    Points are chased forward through the map sequence and then backward
    from the endpoint; the error is the distance between where each point
    started and where the backward pass returned it. Any failed leg yields
    +inf for that point.
    """
    if len(maps) < 2:
        raise ValueError("fb_error needs at least two maps")
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    ok = np.ones(pts.shape[0], dtype=np.bool_)
    cur = pts
    for a, b in zip(maps[:-1], maps[1:]):
        cur, step_ok = klt_track(a, b, cur, **kw)
        ok &= step_ok
    for a, b in zip(maps[::-1][:-1], maps[::-1][1:]):
        cur, step_ok = klt_track(a, b, cur, **kw)
        ok &= step_ok
    err = np.hypot(pts[:, 0] - cur[:, 0], pts[:, 1] - cur[:, 1])
    err[~ok] = np.inf
    return err


@dataclass(frozen=True)
class MedianFlowStep:
    roi: Roi
    n_points: int
    fb_median: float


def _seed_grid(roi: Roi, grid: int) -> np.ndarray:
    fracs = (np.arange(grid, dtype=np.float64) + 0.5) / grid
    xs = roi.x + fracs * roi.size
    ys = roi.y + fracs * roi.size
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def median_flow_step(
    prev_roi: Roi, phi_prev: GradientMap, phi_next: GradientMap, p: TrackParams
) -> MedianFlowStep:
    """Carry the box one frame by the median displacement of reliable points.

    A lattice of grid x grid points seeded in the box is tracked forward
    and back; points keep their vote only when their round-trip error is
    within ``fb_max`` and no worse than the median. The box translates by
    the median displacement and rescales by the median pairwise distance
    ratio. Raises PointLoss when fewer than 4 points survive.
    """
    pts = _seed_grid(prev_roi, p.grid)
    fwd, ok_f, err = _forward_backward(phi_prev, phi_next, pts)
    med = float(np.median(err))
    keep = ok_f & (err <= p.fb_max) & (err <= med)
    n_keep = int(keep.sum())
    if n_keep < 4:
        raise PointLoss(n_keep)

    kept_prev = pts[keep]
    kept_next = fwd[keep]
    disp = kept_next - kept_prev
    mdx = float(np.median(disp[:, 0]))
    mdy = float(np.median(disp[:, 1]))

    iu, iv = np.triu_indices(n_keep, 1)
    d_prev = np.hypot(*(kept_prev[iu] - kept_prev[iv]).T)
    d_next = np.hypot(*(kept_next[iu] - kept_next[iv]).T)
    pair_ok = d_prev > 1e-9
    scale = float(np.median(d_next[pair_ok] / d_prev[pair_ok])) if pair_ok.any() else 1.0
    if p.scale_clamp is not None:
        scale = float(np.clip(scale, *p.scale_clamp))

    cx, cy = prev_roi.center
    roi = Roi.from_center(cx + mdx, cy + mdy, prev_roi.size * scale)
    return MedianFlowStep(roi, n_keep, med)


def ncc_relocalize(
    template: np.ndarray,
    frame: GradientMap,
    center: tuple[float, float],
    radius: float,
) -> tuple[tuple[float, float], float]:
    """Best zero-mean correlation match of the template near ``center``.

    Scans every integer patch offset within ``radius``; returns the best
    patch center and its correlation coefficient in [-1, 1]. Raises
    RelocalizationFailed when the template or every candidate patch has
    zero variance (the coefficient is undefined).
    """
    tmpl = np.ascontiguousarray(template, dtype=np.float64)
    if tmpl.ndim != 2 or tmpl.shape[0] != tmpl.shape[1]:
        raise ValueError("template must be a square matrix")
    cx_best, cy_best, gamma, found = kernels.ncc_search(
        tmpl, frame.mag, float(center[0]), float(center[1]), int(round(radius))
    )
    if not found:
        raise RelocalizationFailed("no candidate patch with usable variance")
    return (cx_best, cy_best), gamma


@dataclass(frozen=True)
class TrackEntry:
    frame_idx: int
    roi: Roi
    status: str
    n_points: int
    fb_median: float


@dataclass
class RoiTrack:
    entries: list[TrackEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i) -> TrackEntry:
        return self.entries[i]

    def status_fraction(self, status: str) -> float:
        if not self.entries:
            return 0.0
        return sum(e.status == status for e in self.entries) / len(self.entries)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame_idx", "x", "y", "size", "status", "n_points", "fb_median"])
            for e in self.entries:
                w.writerow(
                    [e.frame_idx, repr(e.roi.x), repr(e.roi.y), repr(e.roi.size),
                     e.status, e.n_points, repr(float(e.fb_median))]
                )

    @classmethod
    def from_csv(cls, path: str | Path) -> "RoiTrack":
        entries = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            required = {"frame_idx", "x", "y", "size", "status", "n_points", "fb_median"}
            if reader.fieldnames is None or not required.issubset(reader.fieldnames):
                raise FormatError(f"{path}: missing track columns")
            for row in reader:
                status = row["status"]
                if status not in _STATUSES:
                    raise FormatError(f"{path}: unknown status {status!r}")
                entries.append(
                    TrackEntry(
                        int(row["frame_idx"]),
                        Roi(float(row["x"]), float(row["y"]), float(row["size"])),
                        status,
                        int(row["n_points"]),
                        float(row["fb_median"]),
                    )
                )
        return cls(entries)


def _cut_patch(phi: GradientMap, roi: Roi) -> np.ndarray:
    n = max(3, int(round(roi.size)))
    x0 = int(np.clip(round(roi.x), 0, max(0, phi.width - n)))
    y0 = int(np.clip(round(roi.y), 0, max(0, phi.height - n)))
    return phi.mag[y0 : y0 + n, x0 : x0 + n].copy()


def _clamp_center(roi: Roi, width: int, height: int) -> Roi:
    cx, cy = roi.center
    cx = float(np.clip(cx, 0.0, width))
    cy = float(np.clip(cy, 0.0, height))
    return Roi.from_center(cx, cy, roi.size)


def track_sequence(
    frames: list[ThermalFrame],
    init_roi: Roi,
    params: TrackParams | None = None,
    quant: str | QuantRange = "optimal",
) -> RoiTrack:
    """Track the initial box through the whole sequence.

    ``quant`` selects per-frame adaptive ranging (``"optimal"``) or a fixed
    QuantRange. Every frame gets exactly one entry: ``tracked`` after a
    successful median-flow step, ``relocalized`` when the box had to be
    re-acquired by template correlation, ``lost`` when that failed too (the
    box then freezes in place until a later re-acquisition).
    """
    if params is None:
        params = TrackParams()
    frames = list(frames)
    if not frames:
        raise ValueError("cannot track an empty sequence")
    height, width = frames[0].temps.shape
    if not init_roi.inside(width, height):
        raise ValueError(f"initial box {init_roi} does not lie inside the {width}x{height} frame")
    if isinstance(quant, str) and quant != "optimal":
        raise ValueError(f"unknown quantization mode {quant!r}")

    def to_gradient(frame: ThermalFrame) -> GradientMap:
        qrange = select_range(frame) if quant == "optimal" else quant
        q = quantize(frame, qrange)
        if params.despeckle:
            q = QuantizedImage(median_filter(q.pixels, size=3), q.range)
        return gradient_magnitude(q)

    min_points = params.min_points_frac * params.grid**2
    confident = params.grid**2 / 2.0

    phi_prev = to_gradient(frames[0])
    roi = init_roi
    template = _cut_patch(phi_prev, roi)
    template_size = roi.size
    entries = [TrackEntry(0, roi, TRACKED, params.grid**2, 0.0)]

    for idx in range(1, len(frames)):
        phi_next = to_gradient(frames[idx])
        step = None
        try:
            step = median_flow_step(roi, phi_prev, phi_next, params)
            needs_reloc = step.n_points < min_points or step.fb_median > params.fb_median_gate
        except PointLoss:
            needs_reloc = True

        if not needs_reloc:
            roi = _clamp_center(step.roi, width, height)
            entries.append(TrackEntry(idx, roi, TRACKED, step.n_points, step.fb_median))
            if step.n_points >= confident:
                template = _cut_patch(phi_next, roi)
                template_size = roi.size
        else:
            radius = params.search_radius if params.search_radius is not None else 2.0 * roi.size
            try:
                (cx, cy), gamma = ncc_relocalize(template, phi_next, roi.center, radius)
                if gamma < params.min_gamma:
                    raise RelocalizationFailed(f"best match gamma={gamma:.3f} below threshold")
                roi = _clamp_center(Roi.from_center(cx, cy, template_size), width, height)
                entries.append(TrackEntry(idx, roi, RELOCALIZED, 0, math.inf))
            except RelocalizationFailed:
                entries.append(TrackEntry(idx, roi, LOST, 0, math.inf))
        phi_prev = phi_next

    return RoiTrack(entries)
