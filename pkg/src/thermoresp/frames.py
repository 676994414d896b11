"""Thermal sequence I/O and synthetic scene generation.

Container format: magic ``b"THRM1"``, little-endian header
``{width:u32, height:u32, frame_count:u32, fps:f32}``, then one record per
frame: an f64 timestamp followed by ``width*height`` f32 temperatures in
deg C, row-major. CSV import: a directory with one file per frame of
comma-separated deg C values; lexicographic filename order defines the
frame order and timestamps are synthesized at ``1/fps``.

Temperatures are stored as float32 both on disk and in memory so that a
write/read cycle is bit-exact. Loaded frames are guaranteed finite: any
non-finite sample is replaced by the frame median and counted in the
load report. Physically implausible but finite values (e.g. sensor
glitches above 100 deg C) are kept; downstream stages deal with them
statistically.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from thermoresp.errors import FormatError

MAGIC = b"THRM1"
_HEADER = struct.Struct("<IIIf")
_TSTAMP = struct.Struct("<d")

DEFAULT_WIDTH = 160
DEFAULT_HEIGHT = 120
DEFAULT_FPS = 9.0
DEFAULT_EMISSIVITY = 0.98

# Extreme values injected by the synthetic outlier model, deg C.
OUTLIER_RANGE = (-30.0, 120.0)


@dataclass(frozen=True)
class ThermalFrame:
    """One timestamped matrix of absolute temperatures in deg C."""

    timestamp: float
    temps: np.ndarray  # (height, width) float32, read-only

    def __post_init__(self):
        t = np.asarray(self.temps, dtype=np.float32)
        if t.ndim != 2 or t.shape[0] < 1 or t.shape[1] < 1:
            raise ValueError(f"temps must be a non-empty 2-D matrix, got shape {t.shape}")
        t = np.ascontiguousarray(t)
        t.flags.writeable = False
        object.__setattr__(self, "temps", t)

    @property
    def width(self) -> int:
        return self.temps.shape[1]

    @property
    def height(self) -> int:
        return self.temps.shape[0]


@dataclass(frozen=True)
class SequenceMeta:
    nominal_fps: float
    emissivity: float = DEFAULT_EMISSIVITY
    source: str = "recorded"  # "recorded" | "synthetic"

    def __post_init__(self):
        if self.nominal_fps <= 0:
            raise ValueError("nominal_fps must be positive")
        if not (0.0 < self.emissivity <= 1.0):
            raise ValueError("emissivity must lie in (0, 1]")
        if self.source not in ("recorded", "synthetic"):
            raise ValueError(f"unknown source {self.source!r}")


@dataclass
class LoadReport:
    """Per-load accounting of repaired (non-finite) samples."""

    frames: int = 0
    repaired: int = 0


def _repair_nonfinite(temps: np.ndarray, report: LoadReport, idx: int) -> np.ndarray:
    bad = ~np.isfinite(temps)
    n_bad = int(bad.sum())
    if n_bad == 0:
        return temps
    finite = temps[~bad]
    if finite.size == 0:
        raise FormatError(f"frame {idx} contains no finite samples")
    temps = temps.copy()
    temps[bad] = np.median(finite)
    report.repaired += n_bad
    return temps


def save_sequence(path: str | Path, meta: SequenceMeta, frames) -> None:
    """Write frames to the binary container. Frames must share dimensions."""
    frames = list(frames)
    if not frames:
        raise ValueError("cannot save an empty sequence")
    h, w = frames[0].temps.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(w, h, len(frames), meta.nominal_fps))
        last_ts = -math.inf
        for i, fr in enumerate(frames):
            if fr.temps.shape != (h, w):
                raise ValueError(f"frame {i} has shape {fr.temps.shape}, expected {(h, w)}")
            if fr.timestamp <= last_ts:
                raise ValueError(f"timestamps must strictly increase (frame {i})")
            last_ts = fr.timestamp
            fh.write(_TSTAMP.pack(fr.timestamp))
            fh.write(np.ascontiguousarray(fr.temps, dtype="<f4").tobytes())


def load_sequence(path: str | Path, fps: float | None = None):
    """Load a sequence from a container file or a CSV frame directory.

    Returns ``(meta, frames, report)``. ``fps`` is only consulted for CSV
    directories, where timestamps must be synthesized.
    """
    path = Path(path)
    if path.is_dir():
        return _load_csv_dir(path, fps if fps is not None else DEFAULT_FPS)
    return _load_container(path)


def _load_container(path: Path):
    report = LoadReport()
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        raw = fh.read(_HEADER.size)
        if len(raw) != _HEADER.size:
            raise FormatError(f"{path}: truncated header")
        w, h, count, fps = _HEADER.unpack(raw)
        if w < 1 or h < 1 or count < 1 or not (fps > 0):
            raise FormatError(f"{path}: invalid header (w={w}, h={h}, n={count}, fps={fps})")
        frames = []
        n_px = w * h
        rec_size = _TSTAMP.size + 4 * n_px
        last_ts = -math.inf
        for i in range(count):
            rec = fh.read(rec_size)
            if len(rec) != rec_size:
                raise FormatError(f"{path}: truncated at frame {i}")
            (ts,) = _TSTAMP.unpack_from(rec)
            if not (ts > last_ts):
                raise FormatError(f"{path}: timestamps not strictly increasing at frame {i}")
            last_ts = ts
            temps = np.frombuffer(rec, dtype="<f4", count=n_px, offset=_TSTAMP.size)
            temps = temps.reshape(h, w).astype(np.float32)
            temps = _repair_nonfinite(temps, report, i)
            frames.append(ThermalFrame(ts, temps))
            report.frames += 1
    meta = SequenceMeta(nominal_fps=float(fps))
    return meta, frames, report


def _load_csv_dir(path: Path, fps: float):
    files = sorted(p for p in path.iterdir() if p.suffix.lower() == ".csv")
    if not files:
        raise FormatError(f"{path}: no .csv frame files found")
    report = LoadReport()
    frames = []
    shape = None
    for i, fp in enumerate(files):
        try:
            temps = np.loadtxt(fp, delimiter=",", dtype=np.float64, ndmin=2)
        except ValueError as exc:
            raise FormatError(f"{fp}: unparsable frame: {exc}") from exc
        temps = temps.astype(np.float32)
        if shape is None:
            shape = temps.shape
        elif temps.shape != shape:
            raise FormatError(f"{fp}: frame shape {temps.shape} != first frame {shape}")
        temps = _repair_nonfinite(temps, report, i)
        frames.append(ThermalFrame(i / fps, temps))
        report.frames += 1
    return SequenceMeta(nominal_fps=fps), frames, report


# ---------------------------------------------------------------------------
# Synthetic scenes


@dataclass(frozen=True)
class SynthScenario:
    """Parameters of a synthetic face-and-nostril scene.

    The background ramps linearly from ``ambient_start`` to ``ambient_end``
    over the full duration. An elliptical face at ``face_temp`` moves
    rigidly with the nostril; the nostril disk cools sinusoidally below
    the face by up to ``breath_amplitude`` (peak-to-peak). ``breath_plan``
    optionally replaces the constant ``breath_rate`` with piecewise-
    constant segments of (duration_s, bpm); the breathing phase is
    continuous across segments.
    """

    duration: float
    fps: float = DEFAULT_FPS
    width: int = DEFAULT_WIDTH
    height: int = DEFAULT_HEIGHT
    ambient_start: float = 24.0
    ambient_end: float = 24.0
    face_temp: float = 34.0
    face_axes: tuple[float, float] = (58.0, 52.0)  # semi-axes, px
    face_offset: tuple[float, float] = (0.0, -18.0)  # face center relative to nostril
    nostril_center: tuple[float, float] = (80.0, 72.0)
    nostril_path: np.ndarray | None = None  # (n_frames, 2) overrides nostril_center
    nostril_radius: float = 6.0
    nostril_base_depth: float = 2.0  # static coolness of the nostril below the face
    breath_rate: float = 15.0
    breath_plan: tuple[tuple[float, float], ...] | None = None
    breath_amplitude: float = 1.0
    noise_sigma: float = 0.05
    outlier_rate: float = 0.0
    occlusion: tuple[int, int] | None = None  # [start, stop) frames without the nostril
    global_step: tuple[float, float] | None = None  # (time_s, delta_C) added everywhere
    edge_width: float = 1.5  # px, smooth transition at blob boundaries

    def __post_init__(self):
        if self.duration <= 0 or self.fps <= 0:
            raise ValueError("duration and fps must be positive")
        if self.breath_amplitude < 0:
            raise ValueError("breath_amplitude must be non-negative")
        if self.nostril_radius <= 0:
            raise ValueError("nostril_radius must be positive")
        if self.nostril_base_depth < 0:
            raise ValueError("nostril_base_depth must be non-negative")
        if not (0.0 <= self.outlier_rate < 1.0):
            raise ValueError("outlier_rate must lie in [0, 1)")
        for bpm in self._plan_rates():
            if not (6.0 <= bpm <= 51.0):
                raise ValueError(f"breath rate {bpm} BPM outside the 6-51 BPM band")

    def _plan_rates(self):
        if self.breath_plan is not None:
            return [bpm for _, bpm in self.breath_plan]
        return [self.breath_rate]

    @property
    def n_frames(self) -> int:
        return int(round(self.duration * self.fps))


@dataclass
class GroundTruth:
    """Per-frame truth emitted alongside a synthetic sequence."""

    timestamps: np.ndarray  # (n,)
    boxes: np.ndarray  # (n, 3): x, y, size (top-left, px)
    waveform: np.ndarray  # (n,) signed temperature modulation of the nostril, deg C
    phase: np.ndarray  # (n,) accumulated breathing phase, rad
    rates_bpm: np.ndarray  # (n,) instantaneous breathing rate

    def box_size(self) -> float:
        return float(self.boxes[0, 2])


def piecewise_linear_path(waypoints, fps: float, n_frames: int) -> np.ndarray:
    """Build a per-frame (x, y) path from ``[(t, x, y), ...]`` waypoints.

    Positions before the first / after the last waypoint are held constant.
    """
    pts = sorted(waypoints)
    ts = np.array([p[0] for p in pts], dtype=np.float64)
    xs = np.array([p[1] for p in pts], dtype=np.float64)
    ys = np.array([p[2] for p in pts], dtype=np.float64)
    t = np.arange(n_frames) / fps
    return np.column_stack([np.interp(t, ts, xs), np.interp(t, ts, ys)])


def _breath_phase(times: np.ndarray, scenario: SynthScenario) -> tuple[np.ndarray, np.ndarray]:
    """Accumulated phase (rad) and instantaneous rate (BPM) at each time."""
    if scenario.breath_plan is None:
        f = scenario.breath_rate / 60.0
        return 2.0 * np.pi * f * times, np.full_like(times, scenario.breath_rate)
    phase = np.zeros_like(times)
    rates = np.zeros_like(times)
    seg_start = 0.0
    phase_base = 0.0
    last_bpm = scenario.breath_plan[-1][1]
    remaining = np.ones(times.shape, dtype=bool)
    for dur, bpm in scenario.breath_plan:
        f = bpm / 60.0
        in_seg = remaining & (times < seg_start + dur)
        phase[in_seg] = phase_base + 2.0 * np.pi * f * (times[in_seg] - seg_start)
        rates[in_seg] = bpm
        remaining &= ~in_seg
        phase_base += 2.0 * np.pi * f * dur
        seg_start += dur
    # Past the plan: hold the final rate.
    f = last_bpm / 60.0
    phase[remaining] = phase_base + 2.0 * np.pi * f * (times[remaining] - seg_start)
    rates[remaining] = last_bpm
    return phase, rates


def _smooth_mask(dist: np.ndarray, radius: float, edge: float) -> np.ndarray:
    """1 inside, 0 outside, smoothstep over [radius - edge, radius + edge]."""
    if edge <= 0:
        return (dist <= radius).astype(np.float64)
    t = np.clip((radius + edge - dist) / (2.0 * edge), 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def generate_synthetic(scenario: SynthScenario, seed: int):
    """Render a synthetic sequence. Deterministic for a fixed seed.

    Returns ``(meta, frames, truth)``.
    """
    s = scenario
    rng = np.random.default_rng(seed)
    n = s.n_frames
    times = np.arange(n, dtype=np.float64) / s.fps

    if s.nostril_path is not None:
        path = np.asarray(s.nostril_path, dtype=np.float64)
        if path.shape != (n, 2):
            raise ValueError(f"nostril_path must have shape ({n}, 2), got {path.shape}")
    else:
        path = np.tile(np.asarray(s.nostril_center, dtype=np.float64), (n, 1))

    box_size = 2.0 * s.nostril_radius + 2.0 * s.edge_width
    half = box_size / 2.0
    if np.any(path[:, 0] - half < 0) or np.any(path[:, 0] + half > s.width) or (
        np.any(path[:, 1] - half < 0) or np.any(path[:, 1] + half > s.height)
    ):
        raise ValueError("nostril path puts the truth box outside the frame")

    phase, rates = _breath_phase(times, s)
    # Depth of the cool well below face temperature: a static anatomical
    # component plus the breathing oscillation (0..amplitude peak-to-peak).
    depth = s.nostril_base_depth + s.breath_amplitude * 0.5 * (1.0 + np.sin(phase))
    waveform = s.breath_amplitude * 0.5 * np.sin(phase)

    yy, xx = np.mgrid[0 : s.height, 0 : s.width].astype(np.float64)
    ax, ay = s.face_axes
    step_time, step_delta = s.global_step if s.global_step is not None else (math.inf, 0.0)

    frames = []
    boxes = np.empty((n, 3), dtype=np.float64)
    for i in range(n):
        frac = times[i] / s.duration
        ambient = s.ambient_start + (s.ambient_end - s.ambient_start) * frac
        cx, cy = path[i]
        fx, fy = cx + s.face_offset[0], cy + s.face_offset[1]

        # Elliptical face: normalized radial distance 1.0 at the boundary.
        r_face = np.sqrt(((xx - fx) / ax) ** 2 + ((yy - fy) / ay) ** 2)
        face_mask = _smooth_mask(r_face, 1.0, s.edge_width / min(ax, ay))
        img = ambient + (s.face_temp - ambient) * face_mask

        occluded = s.occlusion is not None and s.occlusion[0] <= i < s.occlusion[1]
        if not occluded:
            r_nostril = np.hypot(xx - cx, yy - cy)
            nostril_mask = _smooth_mask(r_nostril, s.nostril_radius, s.edge_width)
            img -= depth[i] * nostril_mask

        if s.noise_sigma > 0:
            img += rng.normal(0.0, s.noise_sigma, size=img.shape)
        if s.outlier_rate > 0:
            mask = rng.random(img.shape) < s.outlier_rate
            img[mask] = rng.uniform(*OUTLIER_RANGE, size=int(mask.sum()))
        if times[i] >= step_time:
            img += step_delta

        frames.append(ThermalFrame(times[i], img.astype(np.float32)))
        boxes[i] = (cx - half, cy - half, box_size)

    meta = SequenceMeta(nominal_fps=s.fps, source="synthetic")
    truth = GroundTruth(times, boxes, waveform, phase, rates)
    return meta, frames, truth
