"""Per-frame adaptive temperature-to-intensity mapping.

The adaptive path picks a temperature range of interest for every frame:
statistical extreme trimming (mean +/- 1.96 sigma), then a two-class
iterative threshold that splits skin from background, then a range whose
bounds depend on whether the background is colder or hotter than skin.
The static path applies a fixed range (traditionally 28-38 deg C) to all
frames; values outside either range saturate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from thermoresp.frames import ThermalFrame

# Nominal human cutaneous skin temperature, used only to decide which of
# the two threshold classes is the face.
SKIN_TEMP_C = 34.0

DEFAULT_LEVELS = 256
DEFAULT_EPS = 0.01  # deg C, fixed-point termination
DEFAULT_MAX_ITER = 100
TRIM_Z = 1.96


@dataclass(frozen=True)
class QuantRange:
    """Temperature interval mapped onto the available intensity levels."""

    t_low: float
    t_high: float
    levels: int = DEFAULT_LEVELS
    widened: bool = False  # set when a degenerate range had to be widened

    def __post_init__(self):
        if not (self.t_low < self.t_high):
            raise ValueError(f"t_low must be < t_high, got [{self.t_low}, {self.t_high}]")
        if self.levels < 2:
            raise ValueError("levels must be >= 2")


DEFAULT_STATIC_RANGE = QuantRange(28.0, 38.0)


@dataclass(frozen=True)
class QuantizedImage:
    pixels: np.ndarray  # (height, width) unsigned integers in [0, levels-1]
    range: QuantRange

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def trim_extremes(frame: ThermalFrame, use_standard_error: bool = False) -> tuple[float, float]:
    """Candidate range ``mean -/+ 1.96 * spread`` of all pixel temperatures.

    ``spread`` is the population standard deviation of the frame. The
    standard-error variant (sigma / sqrt(n)) is kept behind a flag; over a
    full frame it collapses the range to a sliver and is not useful as a
    range of interest.
    """
    temps = frame.temps.astype(np.float64)
    mean = float(temps.mean())
    sigma = float(temps.std())
    if use_standard_error:
        sigma = sigma / np.sqrt(temps.size)
    return mean - TRIM_Z * sigma, mean + TRIM_Z * sigma


def _threshold_iterates(
    temps: np.ndarray, t_init: float, eps: float, max_iter: int
) -> list[float]:
    """Fixed-point iterates T(p+1) = (mean_below + mean_above) / 2.

    ``mean_below`` averages samples <= T(p), ``mean_above`` the rest; an
    empty class contributes the current threshold instead of a mean, which
    makes a constant frame a fixed point.
    """
    temps = np.sort(temps, kind="stable")
    csum = np.concatenate([[0.0], np.cumsum(temps)])
    n = temps.size
    total = csum[-1]
    iterates = [float(t_init)]
    t = float(t_init)
    for _ in range(max_iter):
        k = int(np.searchsorted(temps, t, side="right"))
        mu1 = csum[k] / k if k > 0 else t
        mu2 = (total - csum[k]) / (n - k) if k < n else t
        t_next = 0.5 * (mu1 + mu2)
        iterates.append(t_next)
        if abs(t_next - t) < eps:
            break
        t = t_next
    return iterates


def optimal_threshold(
    frame: ThermalFrame,
    t_init: float,
    eps: float = DEFAULT_EPS,
    max_iter: int = DEFAULT_MAX_ITER,
) -> float:
    """Converged two-class threshold separating the frame's temperature modes.

    An init outside the frame's range leaves one class empty on the first
    pass; the empty-class rule (substitute the current threshold for the
    missing mean) pulls the iterate back inside, so any finite init is
    accepted.
    """
    temps = frame.temps.astype(np.float64).ravel()
    return _threshold_iterates(temps, t_init, eps, max_iter)[-1]


def select_range(
    frame: ThermalFrame,
    levels: int = DEFAULT_LEVELS,
    eps: float = DEFAULT_EPS,
    max_iter: int = DEFAULT_MAX_ITER,
) -> QuantRange:
    """Adaptive per-frame range of interest.

    With a cold background the converged threshold becomes the lower bound
    and the trimmed max the upper; with a background hotter than skin the
    roles mirror. The face class is taken to be the one whose mean is
    nearer nominal skin temperature.
    """
    temps = frame.temps.astype(np.float64).ravel()
    t_min, t_max = trim_extremes(frame)
    t_init = float(np.clip(t_min, temps.min(), temps.max()))
    t_opt = _threshold_iterates(temps, t_init, eps, max_iter)[-1]

    below = temps[temps <= t_opt]
    above = temps[temps > t_opt]
    mu_below = float(below.mean()) if below.size else t_opt
    mu_above = float(above.mean()) if above.size else t_opt
    hot_background = abs(mu_below - SKIN_TEMP_C) < abs(mu_above - SKIN_TEMP_C)

    if hot_background:
        lo, hi = t_min, t_opt
    else:
        lo, hi = t_opt, t_max
    if not (lo < hi):
        mid = 0.5 * (lo + hi)
        return QuantRange(mid - 0.5, mid + 0.5, levels, widened=True)
    return QuantRange(lo, hi, levels)


def quantize(frame: ThermalFrame, qrange: QuantRange) -> QuantizedImage:
    """Map temperatures to [0, levels-1]; out-of-range values saturate.

    Rounds half-up so the mapping is reproducible across platforms.
    """
    t = frame.temps.astype(np.float64)
    span = qrange.t_high - qrange.t_low
    u = (np.clip(t, qrange.t_low, qrange.t_high) - qrange.t_low) / span
    u = np.floor(u * (qrange.levels - 1) + 0.5)
    dtype = np.uint8 if qrange.levels <= 256 else np.uint16
    return QuantizedImage(u.astype(dtype), qrange)
