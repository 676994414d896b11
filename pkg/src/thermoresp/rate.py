"""Sliding-window respiratory-rate estimation.

Per window: taper the signal with a Gaussian centered on the window,
min-max scale it, band-pass it with a zero-phase order-3 elliptic filter
(3 dB passband ripple, 6 dB stopband attenuation, 0.1-0.85 Hz), then take
the frequency maximizing the spectrum of the window's biased
autocorrelation. The quality index of a window is the fraction of its
(unfiltered) spectral power that falls inside the breathing band.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import ellip, sosfiltfilt

from thermoresp.errors import ConfigError, FormatError
from thermoresp.respsig import RespirationSignal

MIN_NFFT = 4096


@dataclass(frozen=True)
class RateParams:
    """Band, window and filter settings for rate estimation.

    ``t_max_hat`` is the longest expected breath period (from the low band
    edge); the analysis window spans twice that. ``gauss_sigma`` of None
    puts the taper's 3-sigma point at the window edge.
    """

    f_lo: float = 0.1
    f_hi: float = 0.85
    t_max_hat: float = 10.0
    win_len: float = 20.0
    win_overlap: float = 15.0
    gauss_sigma: float | None = None
    filter_order: int = 3
    passband_ripple_db: float = 3.0
    stopband_atten_db: float = 6.0

    def __post_init__(self):
        if not (0.0 < self.f_lo < self.f_hi):
            raise ConfigError("need 0 < f_lo < f_hi")
        if not (0.0 < self.win_overlap < self.win_len):
            raise ConfigError("need 0 < win_overlap < win_len")

    @property
    def hop(self) -> float:
        return self.win_len - self.win_overlap

    def half_len(self, fs: float) -> int:
        return int(round(self.t_max_hat * fs))

    def sigma(self, fs: float) -> float:
        return self.gauss_sigma if self.gauss_sigma is not None else self.half_len(fs) / 3.0


@dataclass(frozen=True)
class RateEntry:
    t_center: float
    bpm: float
    rsqi: float
    valid: bool


@dataclass
class RateSeries:
    entries: list[RateEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i) -> RateEntry:
        return self.entries[i]

    def bpm_values(self, valid_only: bool = True) -> np.ndarray:
        return np.array([e.bpm for e in self.entries if e.valid or not valid_only])

    def to_csv(self, path: str | Path, params: RateParams | None = None, fs: float | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if params is not None:
                fh.write(
                    f"# fs={fs!r} win_len={params.win_len!r} win_overlap={params.win_overlap!r}"
                    f" f_lo={params.f_lo!r} f_hi={params.f_hi!r}\n"
                )
            w = csv.writer(fh)
            w.writerow(["t_center", "bpm", "rsqi", "valid"])
            for e in self.entries:
                w.writerow([repr(float(e.t_center)), repr(float(e.bpm)), repr(float(e.rsqi)), int(e.valid)])

    @classmethod
    def from_csv(cls, path: str | Path) -> "RateSeries":
        entries = []
        with open(path, newline="") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#") or line.startswith("t_center"):
                    continue
                t, bpm, rsqi, valid = line.split(",")
                entries.append(RateEntry(float(t), float(bpm), float(rsqi), bool(int(valid))))
        if not entries:
            raise FormatError(f"{path}: no rate entries")
        return cls(entries)


def gaussian_window(signal: RespirationSignal, center_idx: int, p: RateParams) -> np.ndarray:
    """Signal segment around ``center_idx`` tapered by a Gaussian.

    The segment covers offsets -L..L with L = round(t_max_hat * fs); parts
    reaching past the signal are zero-padded so the length is always
    2L + 1.
    """
    half = p.half_len(signal.fs)
    sigma = p.sigma(signal.fs)
    k = np.arange(-half, half + 1)
    seg = np.zeros(2 * half + 1)
    idx = center_idx + k
    inside = (idx >= 0) & (idx < len(signal.samples))
    seg[inside] = signal.samples[idx[inside]]
    return seg * np.exp(-0.5 * (k / sigma) ** 2)


def design_bandpass(fs: float, p: RateParams) -> np.ndarray:
    """Second-order sections of the elliptic band-pass (stable even when
    the band sits far below Nyquist, e.g. 0.1-0.85 Hz at 256 Hz)."""
    if fs <= 2.0 * p.f_hi:
        raise ConfigError(f"sampling rate {fs} Hz cannot carry a {p.f_hi} Hz passband")
    return ellip(
        p.filter_order,
        p.passband_ripple_db,
        p.stopband_atten_db,
        [p.f_lo, p.f_hi],
        btype="bandpass",
        output="sos",
        fs=fs,
    )


def _bandpass_array(x: np.ndarray, fs: float, p: RateParams) -> np.ndarray:
    sos = design_bandpass(fs, p)
    return sosfiltfilt(sos, x - x.mean())


def bandpass(signal: RespirationSignal, p: RateParams) -> RespirationSignal:
    """Zero-phase elliptic band-pass (the filter is applied both ways)."""
    out = _bandpass_array(np.asarray(signal.samples), signal.fs, p)
    return RespirationSignal(out, fs=signal.fs, method=signal.method, t0=signal.t0)


def _feature_scale(x: np.ndarray) -> np.ndarray | None:
    lo, hi = float(x.min()), float(x.max())
    if hi - lo <= 1e-12:
        return None
    return (x - lo) / (hi - lo)


def _nfft_for(n: int) -> int:
    # >= MIN_NFFT and >= 4x the two-sided autocorrelation length, so the
    # peak bin stays well under 1 BPM even at 256 Hz.
    need = 4 * (2 * n - 1)
    nfft = MIN_NFFT
    while nfft < need:
        nfft *= 2
    return nfft


def autocorr_psd(w: np.ndarray, fs: float) -> tuple[np.ndarray, np.ndarray]:
    """Spectrum of the biased autocorrelation of ``w``.

    The biased estimator (sum divided by the full length at every lag)
    keeps the sequence non-negative definite, so the spectrum is real and
    non-negative up to rounding; tiny negative values are clipped.
    """
    w = np.asarray(w, dtype=np.float64)
    n = len(w)
    nfft = _nfft_for(n)  # >= 2n-1, so the circular autocorrelation is linear
    spec = np.fft.rfft(w, nfft)
    full = np.fft.irfft(spec * np.conj(spec), nfft)
    r = full[:n] / n  # biased estimator, lags 0..n-1
    # Transform the two-sided sequence with negative lags wrapped to the
    # tail, which keeps the spectrum real.
    circ = np.zeros(nfft)
    circ[:n] = r
    circ[nfft - n + 1 :] = r[1:][::-1]
    s = np.fft.rfft(circ).real
    freqs = np.fft.rfftfreq(nfft, 1.0 / fs)
    return freqs, np.maximum(s, 0.0)


def psd_peak(w: np.ndarray, fs: float, p: RateParams) -> tuple[float, np.ndarray, np.ndarray]:
    """Frequency of the autocorrelation-spectrum maximum inside the band.

    Expects the already filtered, feature-scaled window. Returns
    ``(f_peak, freqs, power)``; raises on a zero-variance window (callers
    mark those windows invalid instead of estimating).
    """
    w = np.asarray(w, dtype=np.float64)
    if w.std() <= 1e-12:
        raise ValueError("window has no variance")
    freqs, power = autocorr_psd(w - w.mean(), fs)
    band = (freqs >= p.f_lo) & (freqs <= p.f_hi)
    if not band.any():
        raise ConfigError("band of interest contains no spectral bins")
    i_band = np.nonzero(band)[0]
    f_peak = float(freqs[i_band[np.argmax(power[i_band])]])
    return f_peak, freqs, power


def rsqi(signal_window: np.ndarray, fs: float, p: RateParams) -> float:
    """In-band fraction of the window's one-sided spectral power, in [0, 1].

    A pure spectral ratio of whatever window it is given; the numerator
    band is a subset of the denominator's full one-sided range, so the
    result is a probability-like quantity by construction.
    """
    w = np.asarray(signal_window, dtype=np.float64)
    if w.std() <= 1e-12:
        raise ValueError("window has no variance")
    freqs, power = autocorr_psd(w - w.mean(), fs)
    band = (freqs >= p.f_lo) & (freqs <= p.f_hi)
    total = float(np.trapezoid(power, freqs))
    if total <= 0.0:
        raise ValueError("window has no spectral power")
    return float(np.trapezoid(power[band], freqs[band])) / total


def window_centers(signal: RespirationSignal, p: RateParams) -> np.ndarray:
    """Window center times (relative to t0): win_len/2, +hop, ... while the
    window fits in the signal span."""
    duration = signal.duration
    if duration + 1e-9 < p.win_len:
        raise ValueError(f"signal of {duration:.2f}s is shorter than one {p.win_len}s window")
    first = p.win_len / 2.0
    last = duration - p.win_len / 2.0
    n = int(np.floor((last - first) / p.hop + 1e-9)) + 1
    return first + p.hop * np.arange(n)


def estimate_rates(signal: RespirationSignal, p: RateParams | None = None) -> RateSeries:
    """Windowed rate estimates with per-window quality, across the signal."""
    if p is None:
        p = RateParams()
    design_bandpass(signal.fs, p)  # validate fs against the band up front
    entries = []
    for c in window_centers(signal, p):
        t_center = float(signal.t0 + c)
        center_idx = int(round(c * signal.fs))
        w = gaussian_window(signal, center_idx, p)
        scaled = _feature_scale(w)
        if scaled is None:
            entries.append(RateEntry(t_center, float("nan"), float("nan"), False))
            continue
        filtered = _bandpass_array(scaled, signal.fs, p)
        if filtered.std() <= 1e-12:
            entries.append(RateEntry(t_center, float("nan"), float("nan"), False))
            continue
        # Quality is judged after the (gentle, 6 dB stopband) band-pass:
        # that removes the taper's DC lobe while out-of-band interference
        # still shows up, only attenuated.
        quality = rsqi(filtered, signal.fs, p)
        f_peak, _, _ = psd_peak(filtered, signal.fs, p)
        entries.append(RateEntry(t_center, 60.0 * f_peak, quality, True))
    return RateSeries(entries)


def spectrogram(
    signal: RespirationSignal, p: RateParams | None = None, f_max: float = 1.0
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-window band-limited power spectra: (centers, freqs, power[i, j])."""
    if p is None:
        p = RateParams()
    centers = window_centers(signal, p)
    rows = []
    freqs_out = None
    for c in centers:
        w = gaussian_window(signal, int(round(c * signal.fs)), p)
        scaled = _feature_scale(w)
        if scaled is None:
            rows.append(None)
            continue
        filtered = _bandpass_array(scaled, signal.fs, p)
        freqs, power = autocorr_psd(filtered - filtered.mean(), signal.fs)
        keep = freqs <= f_max
        freqs_out = freqs[keep]
        rows.append(power[keep])
    if freqs_out is None:
        raise ValueError("no usable windows for a spectrogram")
    out = np.zeros((len(centers), len(freqs_out)))
    for i, row in enumerate(rows):
        if row is not None:
            out[i] = row
    return signal.t0 + centers, freqs_out, out
