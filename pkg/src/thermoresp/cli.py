"""Command-line entry points.

Subcommands: synth, track, extract, rate, eval, run. Exit codes: 0
success, 2 configuration error, 3 data error, 4 insufficient data.
THERMORESP_THREADS caps worker parallelism; THERMORESP_BACKEND selects
the kernel backend (see thermoresp.kernels).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from thermoresp import __version__, kernels
from thermoresp.errors import (
    AlignmentError,
    ConfigError,
    FormatError,
    InsufficientDataError,
    PipelineStageError,
    ThermorespError,
)
from thermoresp.evaluate import agreement, bland_altman_svg, macc_align, save_pairs_csv
from thermoresp.frames import load_sequence
from thermoresp.pipeline import (
    PipelineConfig,
    _parse_pair,
    _parse_triple,
    _save_spectrogram_csv,
    parse_kv_file,
    run_pipeline,
    synthesize,
)
from thermoresp.quantize import QuantRange
from thermoresp.rate import RateParams, estimate_rates, spectrogram
from thermoresp.respsig import (
    extract_signal,
    load_signal_csv,
    load_waveform_csv,
    resample_256,
    save_signal_csv,
)
from thermoresp.track import Roi, RoiTrack, TrackParams, track_sequence

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INSUFFICIENT = 4


def _apply_thread_cap() -> None:
    cap = os.environ.get("THERMORESP_THREADS")
    if not cap:
        return
    try:
        n = max(1, int(cap))
    except ValueError:
        raise ConfigError(f"THERMORESP_THREADS={cap!r} is not an integer")
    if kernels.BACKEND == "numba":
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _rate_params(args) -> RateParams:
    f_lo, f_hi = _parse_pair(args.band)
    sigma = None if str(args.sigma).lower() == "auto" else float(args.sigma)
    return RateParams(
        f_lo=f_lo, f_hi=f_hi, win_len=args.win, win_overlap=args.overlap, gauss_sigma=sigma
    )


def _add_rate_flags(sub) -> None:
    sub.add_argument("--win", type=float, default=20.0, help="window length, s")
    sub.add_argument("--overlap", type=float, default=15.0, help="window overlap, s")
    sub.add_argument("--band", default="0.1:0.85", help="passband LO:HI, Hz")
    sub.add_argument("--sigma", default="AUTO", help="Gaussian taper sigma in samples, or AUTO")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="thermoresp", description=__doc__)
    ap.add_argument("--version", action="version", version=f"thermoresp {__version__}")
    sp = ap.add_subparsers(dest="command", required=True)

    p = sp.add_parser("synth", help="render a synthetic sequence plus ground truth")
    p.add_argument("--scenario", required=True, help="scenario key=value file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = sp.add_parser("track", help="track a region through a sequence")
    p.add_argument("--input", required=True, help="sequence file or CSV frame directory")
    p.add_argument("--fps", type=float, default=None, help="nominal fps for CSV import")
    p.add_argument("--roi", required=True, help="initial box X,Y,N")
    p.add_argument("--fb-max", type=float, default=5.0)
    p.add_argument("--grid", type=int, default=10)
    p.add_argument("--quantize", choices=["optimal", "static"], default="optimal")
    p.add_argument("--static-range", default="28:38", help="static range LO:HI, deg C")
    p.add_argument("--out", required=True, help="output track CSV")

    p = sp.add_parser("extract", help="extract the respiration waveform")
    p.add_argument("--input", required=True)
    p.add_argument("--fps", type=float, default=None)
    p.add_argument("--track", required=True, help="roi_track.csv from the track step")
    p.add_argument("--method", choices=["voxel", "mean"], default="voxel")
    p.add_argument("--skew-thresh", type=float, default=0.5)
    p.add_argument("--out", required=True, help="output signal CSV")

    p = sp.add_parser("rate", help="estimate windowed respiratory rates")
    p.add_argument("--signal", required=True, help="signal.csv from the extract step")
    _add_rate_flags(p)
    p.add_argument("--out", required=True, help="output rates CSV")
    p.add_argument("--spectrogram", default=None, help="optional spectrogram CSV")

    p = sp.add_parser("eval", help="compare a signal against a reference waveform")
    p.add_argument("--signal", required=True, help="estimated signal CSV")
    p.add_argument("--ref", required=True, help="reference waveform CSV (t,value)")
    p.add_argument("--cutoff", type=float, default=0.9825, help="reference rSQI cutoff")
    _add_rate_flags(p)
    p.add_argument("--out-dir", required=True)

    p = sp.add_parser("run", help="run the full pipeline from a config file")
    p.add_argument("--config", required=True, help="pipeline key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value (repeatable)")
    p.add_argument("--stop-after", choices=["track", "extract", "rate", "eval"], default=None)
    return ap


def _cmd_synth(args) -> int:
    out = synthesize(args.scenario, args.seed, args.out)
    print(f"wrote {out / 'sequence.thrm'}")
    return 0


def _cmd_track(args) -> int:
    meta, frames, report = load_sequence(args.input, fps=args.fps)
    if report.repaired:
        print(f"repaired {report.repaired} non-finite samples", file=sys.stderr)
    x, y, size = _parse_triple(args.roi)
    quant = "optimal" if args.quantize == "optimal" else QuantRange(*_parse_pair(args.static_range))
    params = TrackParams(fb_max=args.fb_max, grid=args.grid)
    track = track_sequence(frames, Roi(x, y, size), params, quant)
    track.to_csv(args.out)
    print(f"wrote {args.out} ({len(track)} frames, "
          f"{track.status_fraction('tracked') * 100:.1f}% tracked)")
    return 0


def _cmd_extract(args) -> int:
    meta, frames, _ = load_sequence(args.input, fps=args.fps)
    track = RoiTrack.from_csv(args.track)
    signal, report = extract_signal(
        frames, track, args.method, args.skew_thresh, fps=meta.nominal_fps
    )
    save_signal_csv(args.out, signal, report.grid_flags)
    print(f"wrote {args.out} ({len(signal.samples)} samples at {signal.fs:g} Hz)")
    return 0


def _cmd_rate(args) -> int:
    signal = load_signal_csv(args.signal)
    params = _rate_params(args)
    rates = estimate_rates(signal, params)
    rates.to_csv(args.out, params, signal.fs)
    if args.spectrogram:
        centers, freqs, power = spectrogram(signal, params)
        _save_spectrogram_csv(Path(args.spectrogram), centers, freqs, power)
    n_valid = sum(e.valid for e in rates)
    print(f"wrote {args.out} ({n_valid}/{len(rates)} valid windows)")
    return 0


def _cmd_eval(args) -> int:
    est = load_signal_csv(args.signal)
    ref = load_waveform_csv(args.ref)
    params = _rate_params(args)
    pair = macc_align(resample_256(ref), resample_256(est))
    ref_rates = estimate_rates(pair.reference, params)
    est_rates = estimate_rates(pair.estimate, params)
    report = agreement(ref_rates, est_rates, args.cutoff)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = report.to_dict()
    payload["lag_samples"] = pair.lag
    payload["lag_seconds"] = pair.lag_seconds
    (out / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    save_pairs_csv(out / "pairs.csv", ref_rates, est_rates, args.cutoff)
    bland_altman_svg(out / "bland_altman.svg", ref_rates, est_rates, report)
    print(f"wrote {out / 'report.json'} (bias {report.bias:.4f} bpm, rmse {report.rmse:.4f} bpm)")
    return 0


def _cmd_run(args) -> int:
    raw = parse_kv_file(args.config)
    for override in args.set:
        if "=" not in override:
            raise ConfigError(f"--set expects KEY=VALUE, got {override!r}")
        key, value = override.split("=", 1)
        raw[key.strip()] = value.strip()
    config = PipelineConfig.from_mapping(raw)
    if args.stop_after is not None:
        config.stop_after = args.stop_after
    out = run_pipeline(config)
    print(f"pipeline artifacts in {out}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "track": _cmd_track,
    "extract": _cmd_extract,
    "rate": _cmd_rate,
    "eval": _cmd_eval,
    "run": _cmd_run,
}


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, PipelineStageError):
        return _exit_code(exc.cause)
    if isinstance(exc, (ConfigError, ValueError)):
        return EXIT_CONFIG
    if isinstance(exc, (FormatError, AlignmentError)):
        return EXIT_DATA
    if isinstance(exc, InsufficientDataError):
        return EXIT_INSUFFICIENT
    return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _apply_thread_cap()
        return _COMMANDS[args.command](args)
    except (ThermorespError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
