"""Agreement between estimated and reference waveforms.

Signals are first brought to a common high rate, synchronized at the lag
maximizing their full cross-correlation, then compared window-by-window:
mean bias with 95% limits of agreement, RMSE and Pearson correlation
over the surviving window pairs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sps

from thermoresp.errors import AlignmentError, InsufficientDataError
from thermoresp.rate import RateSeries
from thermoresp.respsig import RespirationSignal

DEFAULT_RSQI_CUTOFF = 0.9825
MIN_OVERLAP_S = 20.0


@dataclass(frozen=True)
class AlignedPair:
    reference: RespirationSignal
    estimate: RespirationSignal
    lag: int  # samples the estimate had to be advanced by

    @property
    def lag_seconds(self) -> float:
        return self.lag / self.reference.fs


@dataclass(frozen=True)
class AgreementReport:
    bias: float
    loa_lo: float
    loa_hi: float
    rmse: float
    pearson_r: float
    n_windows: int
    rsqi_cutoff: float
    degenerate_r: bool = False  # constant series on one side, r undefined

    def to_dict(self) -> dict:
        return {
            "bias_bpm": self.bias,
            "loa_lo_bpm": self.loa_lo,
            "loa_hi_bpm": self.loa_hi,
            "rmse_bpm": self.rmse,
            "pearson_r": None if self.degenerate_r else self.pearson_r,
            "n_windows": self.n_windows,
            "rsqi_cutoff": self.rsqi_cutoff,
            "degenerate_r": self.degenerate_r,
        }


def xcorr_lag(ref: np.ndarray, est: np.ndarray) -> int:
    """Lag maximizing sum(ref[n] * est[n + lag]) over all full-overlap lags."""
    c = sps.correlate(ref, est, mode="full", method="fft")
    lags = sps.correlation_lags(len(ref), len(est), mode="full")
    # scipy's lag convention pairs ref[m] with est[m - lag]; negate so a
    # positive result means the estimate must be advanced.
    return int(-lags[int(np.argmax(c))])


def macc_align(ref: RespirationSignal, est: RespirationSignal) -> AlignedPair:
    """Synchronize the estimate to the reference by peak cross-correlation.

    Both signals must share a sampling rate (bring them to 256 Hz with
    resample_256 first). Means are removed before correlating; the shifted
    non-overlapping tails are trimmed away.
    """
    if abs(ref.fs - est.fs) > 1e-9:
        raise ValueError(f"sampling rates differ: {ref.fs} vs {est.fs}")
    r = ref.samples - ref.samples.mean()
    e = est.samples - est.samples.mean()
    lag = xcorr_lag(r, e)

    # est_aligned[n] = est[n + lag]
    start_ref = max(0, -lag)
    stop_ref = min(len(r), len(e) - lag)
    if stop_ref - start_ref < int(MIN_OVERLAP_S * ref.fs):
        raise AlignmentError(
            f"only {(stop_ref - start_ref) / ref.fs:.1f}s overlap after a lag of {lag} samples"
        )
    t0 = ref.t0 + start_ref / ref.fs
    ref_trim = RespirationSignal(ref.samples[start_ref:stop_ref], ref.fs, ref.method, t0)
    est_trim = RespirationSignal(
        est.samples[start_ref + lag : stop_ref + lag], est.fs, est.method, t0
    )
    return AlignedPair(ref_trim, est_trim, lag)


def agreement(
    ref_rates: RateSeries,
    est_rates: RateSeries,
    rsqi_cutoff: float = DEFAULT_RSQI_CUTOFF,
) -> AgreementReport:
    """Bland-Altman bias and limits, RMSE, and correlation over window pairs.

    Window pairs are matched by center time; a pair is dropped when either
    side is invalid or the reference quality is below the cutoff. Limits
    of agreement use the n-1 standard deviation of the differences.
    """
    if len(ref_rates) != len(est_rates):
        raise ValueError(f"window counts differ: {len(ref_rates)} vs {len(est_rates)}")
    diffs = []
    pairs = []
    for r, e in zip(ref_rates, est_rates):
        if abs(r.t_center - e.t_center) > 1e-6:
            raise ValueError(f"window centers differ: {r.t_center} vs {e.t_center}")
        if not (r.valid and e.valid) or r.rsqi < rsqi_cutoff:
            continue
        diffs.append(e.bpm - r.bpm)
        pairs.append((r.bpm, e.bpm))
    if len(diffs) < 3:
        raise InsufficientDataError(
            f"only {len(diffs)} window pairs survive the cutoff {rsqi_cutoff}"
        )
    d = np.array(diffs)
    ref_v = np.array([p[0] for p in pairs])
    est_v = np.array([p[1] for p in pairs])
    bias = float(d.mean())
    sd = float(d.std(ddof=1))
    rmse = float(np.sqrt(np.mean(d**2)))
    degenerate = bool(ref_v.std() <= 1e-12 or est_v.std() <= 1e-12)
    if degenerate:
        r_val = float("nan")
    else:
        r_val = float(np.corrcoef(ref_v, est_v)[0, 1])
    return AgreementReport(
        bias=bias,
        loa_lo=bias - 1.96 * sd,
        loa_hi=bias + 1.96 * sd,
        rmse=rmse,
        pearson_r=r_val,
        n_windows=len(diffs),
        rsqi_cutoff=rsqi_cutoff,
        degenerate_r=degenerate,
    )


def save_pairs_csv(path: str | Path, ref_rates: RateSeries, est_rates: RateSeries, rsqi_cutoff: float) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_center", "ref_bpm", "est_bpm", "ref_rsqi", "est_rsqi", "used"])
        for r, e in zip(ref_rates, est_rates):
            used = int(r.valid and e.valid and r.rsqi >= rsqi_cutoff)
            w.writerow(
                [repr(float(r.t_center)), repr(float(r.bpm)), repr(float(e.bpm)),
                 repr(float(r.rsqi)), repr(float(e.rsqi)), used]
            )


def bland_altman_svg(
    path: str | Path,
    ref_rates: RateSeries,
    est_rates: RateSeries,
    report: AgreementReport,
    width: int = 640,
    height: int = 480,
) -> None:
    """Minimal self-contained scatter of (mean, difference) with bias/LoA lines."""
    means, diffs = [], []
    for r, e in zip(ref_rates, est_rates):
        if r.valid and e.valid and r.rsqi >= report.rsqi_cutoff:
            means.append(0.5 * (r.bpm + e.bpm))
            diffs.append(e.bpm - r.bpm)
    m = np.array(means)
    d = np.array(diffs)
    pad = 50
    x_lo, x_hi = float(m.min()), float(m.max())
    if x_hi - x_lo < 1e-9:
        x_lo, x_hi = x_lo - 1.0, x_hi + 1.0
    y_vals = np.concatenate([d, [report.loa_lo, report.loa_hi]])
    y_lo, y_hi = float(y_vals.min()), float(y_vals.max())
    span = max(y_hi - y_lo, 1e-9)
    y_lo, y_hi = y_lo - 0.15 * span, y_hi + 0.15 * span

    def sx(v: float) -> float:
        return pad + (v - x_lo) / (x_hi - x_lo) * (width - 2 * pad)

    def sy(v: float) -> float:
        return height - pad - (v - y_lo) / (y_hi - y_lo) * (height - 2 * pad)

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
    ]
    for y_val, dash, label in (
        (report.bias, "", f"bias {report.bias:.3f}"),
        (report.loa_lo, "6,4", f"loa {report.loa_lo:.3f}"),
        (report.loa_hi, "6,4", f"loa {report.loa_hi:.3f}"),
    ):
        y = sy(y_val)
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        lines.append(
            f'<line x1="{pad}" y1="{y:.2f}" x2="{width - pad}" y2="{y:.2f}"'
            f' stroke="crimson"{dash_attr}/>'
        )
        lines.append(
            f'<text x="{width - pad + 4}" y="{y:.2f}" font-size="10">{label}</text>'
        )
    for mi, di in zip(m, d):
        lines.append(f'<circle cx="{sx(mi):.2f}" cy="{sy(di):.2f}" r="3" fill="steelblue"/>')
    lines.append(
        f'<text x="{pad}" y="{pad - 10}" font-size="12">difference vs mean, BPM'
        f" (n={report.n_windows}, rmse={report.rmse:.3f})</text>"
    )
    lines.append("</svg>")
    Path(path).write_text("\n".join(lines) + "\n")
