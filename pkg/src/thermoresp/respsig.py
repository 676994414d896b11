"""Respiration waveform extraction from a tracked region.

Two features per frame, both computed on raw temperatures cropped to the
tracked box: the deficit-volume feature sums how far each pixel sits
below a moving boundary (the 2-frame moving average of the box's spatial
mean), counting only pixels below it; the baseline feature is the plain
spatial mean. The boundary resets after frames whose box is suspect,
detected either by tracker status or by a jump in the crop's skewness.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from thermoresp.errors import FormatError
from thermoresp.frames import ThermalFrame
from thermoresp.track import RoiTrack, TRACKED

VOXEL = "voxel"
MEAN = "mean"

DEFAULT_SKEW_THRESH = 0.5

FLAG_OK = "ok"
FLAG_HELD = "held"
FLAG_RESET = "reset"


@dataclass(frozen=True)
class RespirationSignal:
    """Uniformly sampled 1-D respiration waveform."""

    samples: np.ndarray
    fs: float
    method: str = VOXEL
    t0: float = 0.0

    def __post_init__(self):
        s = np.ascontiguousarray(np.asarray(self.samples, dtype=np.float64))
        if s.ndim != 1 or s.size < 2:
            raise ValueError("signal needs at least 2 samples")
        if not np.isfinite(s).all():
            raise ValueError("signal samples must be finite")
        if not (self.fs > 0):
            raise ValueError("fs must be positive")
        s.flags.writeable = False
        object.__setattr__(self, "samples", s)

    @property
    def duration(self) -> float:
        return (len(self.samples) - 1) / self.fs

    def times(self) -> np.ndarray:
        return self.t0 + np.arange(len(self.samples)) / self.fs


@dataclass
class VoxelState:
    """Running state of the boundary estimator."""

    prev_mean: float | None = None
    last_skewness: float | None = None
    reset_pending: bool = False


def voxel_value(roi_temps: np.ndarray, t_delta: float) -> float:
    """Sum of positive deficits ``t_delta - temp`` over the crop, deg C * px.

    Summed with fsum so the result is exactly invariant to pixel order.
    """
    d = t_delta - np.asarray(roi_temps, dtype=np.float64)
    return math.fsum(d[d > 0])


def update_boundary(state: VoxelState, spatial_mean: float) -> float:
    """Two-frame moving average of spatial means, restarting after a reset."""
    if state.reset_pending or state.prev_mean is None:
        boundary = spatial_mean
        state.reset_pending = False
    else:
        boundary = 0.5 * (spatial_mean + state.prev_mean)
    state.prev_mean = spatial_mean
    return boundary


def _skewness(values: np.ndarray) -> tuple[float, bool]:
    """Population skewness; (0, True) when the spread is degenerate."""
    v = np.asarray(values, dtype=np.float64).ravel()
    mu = v.mean()
    sigma = v.std()
    if sigma <= 1e-12:
        return 0.0, True
    return float(np.mean(((v - mu) / sigma) ** 3)), False


def skewness_jump(roi_temps_t: np.ndarray, roi_temps_prev: np.ndarray) -> float:
    """Change in crop skewness between consecutive frames."""
    s_now, deg_now = _skewness(roi_temps_t)
    s_prev, deg_prev = _skewness(roi_temps_prev)
    if deg_now or deg_prev:
        return 0.0
    return s_now - s_prev


@dataclass
class ExtractionReport:
    flags: list[str]  # per source frame
    grid_flags: list[str] | None = None  # per resampled output sample
    resets: int = 0
    held: int = 0
    degenerate: bool = False  # constant raw signal forced the all-zeros output


def _crop(frame: ThermalFrame, roi) -> np.ndarray:
    x0 = int(round(roi.x))
    y0 = int(round(roi.y))
    x1 = int(round(roi.x + roi.size))
    y1 = int(round(roi.y + roi.size))
    x0, x1 = max(0, x0), min(frame.width, x1)
    y0, y1 = max(0, y0), min(frame.height, y1)
    return frame.temps[y0:y1, x0:x1]


def extract_signal(
    frames: list[ThermalFrame],
    track: RoiTrack,
    method: str = VOXEL,
    skew_thresh: float = DEFAULT_SKEW_THRESH,
    fps: float | None = None,
) -> tuple[RespirationSignal, ExtractionReport]:
    """Per-frame feature series, resampled uniformly and scaled to [0, 1].

    The raw per-frame values are linearly resampled onto the nominal-fps
    grid spanned by the frame timestamps (``fps`` defaults to the median
    frame spacing), then min-max normalized. A constant series cannot be
    normalized and comes back as all zeros with the report's
    ``degenerate`` flag set.
    """
    if method not in (VOXEL, MEAN):
        raise ValueError(f"unknown method {method!r}")
    frames = list(frames)
    if len(track) != len(frames):
        raise ValueError(f"track has {len(track)} entries for {len(frames)} frames")
    if len(frames) < 2:
        raise ValueError("need at least two frames")

    state = VoxelState()
    prev_crop = None
    prev_value = None
    values = np.empty(len(frames))
    flags = [FLAG_OK] * len(frames)
    report = ExtractionReport(flags)

    for i, (frame, entry) in enumerate(zip(frames, track)):
        crop = _crop(frame, entry.roi)
        if crop.size == 0:
            if prev_value is None:
                raise ValueError("initial box crop is empty")
            values[i] = prev_value
            flags[i] = FLAG_HELD
            report.held += 1
            state.reset_pending = True
            report.resets += 1
            continue

        crop64 = crop.astype(np.float64)
        spatial_mean = float(crop64.mean())
        if method == MEAN:
            value = spatial_mean
        else:
            boundary = update_boundary(state, spatial_mean)
            value = voxel_value(crop64, boundary)

        suspect = entry.status != TRACKED
        if prev_crop is not None and abs(skewness_jump(crop64, prev_crop)) > skew_thresh:
            suspect = True

        if entry.status == "lost" and prev_value is not None:
            values[i] = prev_value
            flags[i] = FLAG_HELD
            report.held += 1
        else:
            values[i] = value
            prev_value = value
        if suspect:
            state.reset_pending = True
            flags[i] = FLAG_RESET if flags[i] == FLAG_OK else flags[i]
            report.resets += 1
        prev_crop = crop64

    ts = np.array([f.timestamp for f in frames])
    fs = float(fps) if fps is not None else 1.0 / float(np.median(np.diff(ts)))
    n_out = int(np.floor((ts[-1] - ts[0]) * fs + 1e-9)) + 1
    grid = ts[0] + np.arange(n_out) / fs
    resampled = np.interp(grid, ts, values)

    right = np.clip(np.searchsorted(ts, grid), 0, len(ts) - 1)
    left = np.clip(right - 1, 0, len(ts) - 1)
    nearest = np.where(np.abs(ts[right] - grid) <= np.abs(grid - ts[left]), right, left)
    report.grid_flags = [flags[i] for i in nearest]

    lo, hi = float(resampled.min()), float(resampled.max())
    if hi - lo <= 1e-12:
        resampled = np.zeros_like(resampled)
        report.degenerate = True
    else:
        resampled = (resampled - lo) / (hi - lo)

    signal = RespirationSignal(resampled, fs=fs, method=method, t0=float(ts[0]))
    return signal, report


def resample_256(signal: RespirationSignal, target_fs: float = 256.0) -> RespirationSignal:
    """Natural cubic spline resampling onto a uniform high-rate grid.

    The grid starts exactly at the signal's first sample and covers the
    original span; original sample instants that fall on the grid are
    reproduced exactly (the spline interpolates).
    """
    if len(signal.samples) < 4:
        raise ValueError("spline resampling needs at least 4 samples")
    t = signal.times()
    spline = CubicSpline(t, signal.samples, bc_type="natural")
    n_out = int(np.floor((t[-1] - t[0]) * target_fs + 1e-9)) + 1
    grid = t[0] + np.arange(n_out) / target_fs
    return RespirationSignal(spline(grid), fs=target_fs, method=signal.method, t0=signal.t0)


def save_signal_csv(path: str | Path, signal: RespirationSignal, flags: list[str] | None = None) -> None:
    """Write (t, value, status_flag) rows with a metadata comment header."""
    t = signal.times()
    with open(path, "w", newline="") as fh:
        fh.write(f"# fs={signal.fs!r} method={signal.method} t0={signal.t0!r}\n")
        w = csv.writer(fh)
        w.writerow(["t", "value", "status_flag"])
        for i, (ti, vi) in enumerate(zip(t, signal.samples)):
            flag = flags[min(i, len(flags) - 1)] if flags else FLAG_OK
            w.writerow([repr(float(ti)), repr(float(vi)), flag])


def load_signal_csv(path: str | Path) -> RespirationSignal:
    """Read a signal written by save_signal_csv."""
    meta: dict[str, str] = {}
    rows: list[tuple[float, float]] = []
    with open(path, newline="") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for part in line[1:].split():
                    if "=" in part:
                        k, v = part.split("=", 1)
                        meta[k] = v
                continue
            if line.startswith("t,"):
                continue
            fields = line.split(",")
            rows.append((float(fields[0]), float(fields[1])))
    if len(rows) < 2:
        raise FormatError(f"{path}: not enough samples")
    if "fs" not in meta:
        raise FormatError(f"{path}: missing '# fs=...' header")
    values = np.array([v for _, v in rows])
    return RespirationSignal(
        values,
        fs=float(meta["fs"]),
        method=meta.get("method", VOXEL),
        t0=float(meta.get("t0", rows[0][0])),
    )


def load_waveform_csv(path: str | Path, method: str = MEAN) -> RespirationSignal:
    """Read a plain (t, value) CSV, e.g. a reference-sensor waveform.

    Accepts an optional header row; sampling must be uniform (1% jitter
    tolerance) since the result carries a single rate.
    """
    ts: list[float] = []
    vals: list[float] = []
    with open(path, newline="") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split(",")
            try:
                ts.append(float(fields[0]))
                vals.append(float(fields[1]))
            except ValueError:
                continue  # header row
    if len(ts) < 2:
        raise FormatError(f"{path}: not enough samples")
    t = np.array(ts)
    dt = np.diff(t)
    if dt.min() <= 0:
        raise FormatError(f"{path}: timestamps must strictly increase")
    if (dt.max() - dt.min()) > 0.01 * dt.mean():
        raise FormatError(f"{path}: waveform sampling is not uniform")
    return RespirationSignal(np.array(vals), fs=1.0 / float(dt.mean()), method=method, t0=float(t[0]))
