"""End-to-end orchestration: configuration, stages, artifact emission.

Configuration files are flat ``key = value`` text; ``#`` starts a
comment. The same format describes synthetic scenarios. A full run
writes roi_track.csv, signal.csv, rates.csv, spectrogram.csv,
report.json, pairs.csv and bland_altman.svg into the output directory,
plus a manifest recording the config hash; identical config and inputs
produce byte-identical CSV artifacts.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from thermoresp import __version__, kernels
from thermoresp.errors import ConfigError, PipelineStageError
from thermoresp.evaluate import agreement, bland_altman_svg, macc_align, save_pairs_csv
from thermoresp.frames import (
    GroundTruth,
    SynthScenario,
    generate_synthetic,
    load_sequence,
    piecewise_linear_path,
    save_sequence,
)
from thermoresp.quantize import QuantRange
from thermoresp.rate import RateParams, estimate_rates, spectrogram
from thermoresp.respsig import (
    RespirationSignal,
    extract_signal,
    load_waveform_csv,
    resample_256,
    save_signal_csv,
)
from thermoresp.track import Roi, TrackParams, track_sequence

STAGES = ("track", "extract", "rate", "eval")


def parse_kv_file(path: str | Path) -> dict[str, str]:
    """Flat key = value parser shared by config and scenario files."""
    out: dict[str, str] = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _parse_pair(text: str, sep: str = ":") -> tuple[float, float]:
    parts = text.split(sep)
    if len(parts) != 2:
        raise ConfigError(f"expected 'a{sep}b', got {text!r}")
    return float(parts[0]), float(parts[1])


def _parse_triple(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigError(f"expected 'x,y,size', got {text!r}")
    return float(parts[0]), float(parts[1]), float(parts[2])


@dataclass
class PipelineConfig:
    out_dir: str
    input: str | None = None
    scenario: str | None = None
    fps: float | None = None
    seed: int = 0
    init_roi: tuple[float, float, float] | None = None
    quantize: str = "optimal"
    static_range: tuple[float, float] = (28.0, 38.0)
    fb_max: float = 5.0
    grid: int = 10
    min_points_frac: float = 0.5
    search_radius: float | None = None
    min_gamma: float = 0.4
    method: str = "voxel"
    skew_thresh: float = 0.5
    win_len: float = 20.0
    win_overlap: float = 15.0
    f_lo: float = 0.1
    f_hi: float = 0.85
    gauss_sigma: float | None = None
    ref: str | None = None
    rsqi_cutoff: float = 0.9825
    stop_after: str | None = None

    def validate(self) -> None:
        if not self.out_dir:
            raise ConfigError("missing required field 'out_dir'")
        if (self.input is None) == (self.scenario is None):
            raise ConfigError("exactly one of 'input' or 'scenario' must be set")
        if self.input is not None and not Path(self.input).exists():
            raise ConfigError(f"field 'input': path {self.input!r} does not exist")
        if self.scenario is not None and not Path(self.scenario).exists():
            raise ConfigError(f"field 'scenario': path {self.scenario!r} does not exist")
        if self.quantize not in ("optimal", "static"):
            raise ConfigError(f"field 'quantize': must be optimal|static, got {self.quantize!r}")
        if self.method not in ("voxel", "mean"):
            raise ConfigError(f"field 'method': must be voxel|mean, got {self.method!r}")
        if self.stop_after is not None and self.stop_after not in STAGES:
            raise ConfigError(f"field 'stop_after': must be one of {STAGES}")
        if self.input is not None and self.init_roi is None:
            raise ConfigError("field 'init_roi' is required for recorded input")

    def canonical(self) -> str:
        """Stable serialization used for the manifest hash."""
        parts = []
        for f in sorted(fields(self), key=lambda f: f.name):
            parts.append(f"{f.name} = {getattr(self, f.name)!r}")
        return "\n".join(parts) + "\n"

    @classmethod
    def from_mapping(cls, raw: dict[str, str]) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw: dict = {}
        for key, text in raw.items():
            if key in ("input", "scenario", "ref", "out_dir", "quantize", "method", "stop_after"):
                kw[key] = text
            elif key == "seed":
                kw[key] = int(text)
            elif key == "grid":
                kw[key] = int(text)
            elif key == "init_roi":
                kw[key] = _parse_triple(text)
            elif key == "static_range":
                kw[key] = _parse_pair(text)
            elif key == "gauss_sigma":
                kw[key] = None if text.lower() == "auto" else float(text)
            elif key in ("fps", "search_radius"):
                kw[key] = None if text.lower() in ("auto", "none") else float(text)
            else:
                kw[key] = float(text)
        if "out_dir" not in kw:
            raise ConfigError("missing required field 'out_dir'")
        return cls(**kw)

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        return cls.from_mapping(parse_kv_file(path))

    def track_params(self) -> TrackParams:
        return TrackParams(
            fb_max=self.fb_max,
            grid=self.grid,
            min_points_frac=self.min_points_frac,
            search_radius=self.search_radius,
            min_gamma=self.min_gamma,
        )

    def rate_params(self) -> RateParams:
        return RateParams(
            f_lo=self.f_lo,
            f_hi=self.f_hi,
            win_len=self.win_len,
            win_overlap=self.win_overlap,
            gauss_sigma=self.gauss_sigma,
        )


_SCENARIO_FLOATS = (
    "duration", "fps", "ambient_start", "ambient_end", "face_temp", "nostril_radius",
    "nostril_base_depth", "breath_rate", "breath_amplitude", "noise_sigma",
    "outlier_rate", "edge_width",
)


def scenario_from_mapping(raw: dict[str, str]) -> SynthScenario:
    kw: dict = {}
    n_frames = None
    if "duration" not in raw or "fps" not in raw:
        pass  # defaults/validation handled by SynthScenario
    for key, text in raw.items():
        if key in _SCENARIO_FLOATS:
            kw[key] = float(text)
        elif key in ("width", "height"):
            kw[key] = int(text)
        elif key == "nostril_center":
            kw[key] = tuple(float(v) for v in text.split(","))
        elif key == "face_axes":
            kw[key] = _parse_pair(text, ",")
        elif key == "face_offset":
            kw[key] = _parse_pair(text, ",")
        elif key == "breath_plan":
            segs = []
            for seg in text.split(";"):
                dur, bpm = _parse_pair(seg.strip())
                segs.append((dur, bpm))
            kw[key] = tuple(segs)
        elif key == "occlusion":
            a, b = _parse_pair(text)
            kw[key] = (int(a), int(b))
        elif key == "global_step":
            kw[key] = _parse_pair(text)
        elif key == "nostril_path":
            waypoints = []
            for wp in text.split(";"):
                t_part, xy = wp.strip().split(":", 1)
                x, y = _parse_pair(xy, ",")
                waypoints.append((float(t_part), x, y))
            kw[key] = waypoints  # resolved to a per-frame path below
        else:
            raise ConfigError(f"unknown scenario key {key!r}")
    waypoints = kw.pop("nostril_path", None)
    try:
        scn = SynthScenario(**kw)
        if waypoints is not None:
            path = piecewise_linear_path(waypoints, scn.fps, scn.n_frames)
            scn = SynthScenario(**{**kw, "nostril_path": path})
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid scenario: {exc}") from exc
    return scn


def load_scenario(path: str | Path) -> SynthScenario:
    return scenario_from_mapping(parse_kv_file(path))


def write_truth(out_dir: Path, truth: GroundTruth) -> None:
    with open(out_dir / "truth_boxes.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame_idx", "x", "y", "size"])
        for i, (x, y, size) in enumerate(truth.boxes):
            w.writerow([i, repr(float(x)), repr(float(y)), repr(float(size))])
    with open(out_dir / "truth_waveform.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "value"])
        for t, v in zip(truth.timestamps, truth.waveform):
            w.writerow([repr(float(t)), repr(float(v))])


def synthesize(scenario_path: str | Path, seed: int, out_dir: str | Path) -> Path:
    """`synth` subcommand: write sequence.thrm plus truth CSVs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scn = load_scenario(scenario_path)
    meta, frames, truth = generate_synthetic(scn, seed)
    save_sequence(out / "sequence.thrm", meta, frames)
    write_truth(out, truth)
    return out


def _save_spectrogram_csv(path: Path, centers, freqs, power) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_center", "freq_hz", "power"])
        for i, c in enumerate(centers):
            for f, p_val in zip(freqs, power[i]):
                w.writerow([repr(float(c)), repr(float(f)), repr(float(p_val))])


def run_pipeline(config: PipelineConfig) -> Path:
    """Run configured stages in order, emitting artifacts incrementally."""
    config.validate()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    artifacts: list[str] = []

    def _stage(name: str):
        class _Ctx:
            def __enter__(self):
                return None

            def __exit__(self, exc_type, exc, tb):
                if exc is not None and not isinstance(exc, PipelineStageError):
                    raise PipelineStageError(name, exc) from exc
                return False

        return _Ctx()

    truth: GroundTruth | None = None
    with _stage("acquire"):
        if config.scenario is not None:
            scn = load_scenario(config.scenario)
            meta, frames, truth = generate_synthetic(scn, config.seed)
        else:
            meta, frames, _report = load_sequence(config.input, fps=config.fps)

    if config.init_roi is not None:
        init_roi = Roi(*config.init_roi)
    else:
        x, y, size = truth.boxes[0]
        init_roi = Roi(float(x), float(y), float(size))

    quant = "optimal" if config.quantize == "optimal" else QuantRange(*config.static_range)

    with _stage("track"):
        track = track_sequence(frames, init_roi, config.track_params(), quant)
        track.to_csv(out / "roi_track.csv")
        artifacts.append("roi_track.csv")
    if config.stop_after == "track":
        return out

    with _stage("extract"):
        signal, ext_report = extract_signal(
            frames, track, config.method, config.skew_thresh, fps=meta.nominal_fps
        )
        save_signal_csv(out / "signal.csv", signal, ext_report.grid_flags)
        artifacts.append("signal.csv")
    if config.stop_after == "extract":
        return out

    rate_params = config.rate_params()
    with _stage("rate"):
        rates = estimate_rates(signal, rate_params)
        rates.to_csv(out / "rates.csv", rate_params, signal.fs)
        centers, freqs, power = spectrogram(signal, rate_params)
        _save_spectrogram_csv(out / "spectrogram.csv", centers, freqs, power)
        artifacts += ["rates.csv", "spectrogram.csv"]
    if config.stop_after == "rate":
        return out

    ref_signal: RespirationSignal | None = None
    if config.ref is not None:
        with _stage("eval"):
            ref_signal = load_waveform_csv(config.ref)
    elif truth is not None and float(np.ptp(truth.waveform)) > 0:
        ref_signal = RespirationSignal(
            truth.waveform, fs=meta.nominal_fps, method="mean", t0=float(truth.timestamps[0])
        )

    if ref_signal is not None:
        with _stage("eval"):
            ref256 = resample_256(ref_signal)
            est256 = resample_256(signal)
            pair = macc_align(ref256, est256)
            ref_rates = estimate_rates(pair.reference, rate_params)
            est_rates = estimate_rates(pair.estimate, rate_params)
            report = agreement(ref_rates, est_rates, config.rsqi_cutoff)
            payload = report.to_dict()
            payload["lag_samples"] = pair.lag
            payload["lag_seconds"] = pair.lag_seconds
            (out / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
            save_pairs_csv(out / "pairs.csv", ref_rates, est_rates, config.rsqi_cutoff)
            bland_altman_svg(out / "bland_altman.svg", ref_rates, est_rates, report)
            artifacts += ["report.json", "pairs.csv", "bland_altman.svg"]

    manifest = {
        "config_sha256": hashlib.sha256(config.canonical().encode()).hexdigest(),
        "version": __version__,
        "backend": kernels.BACKEND,
        "n_frames": len(frames),
        "artifacts": sorted(artifacts),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out
