"""Respiration-rate estimation from mobile thermal-camera sequences."""

__version__ = "0.1.0"

from thermoresp.frames import (
    GroundTruth,
    SequenceMeta,
    SynthScenario,
    ThermalFrame,
    generate_synthetic,
    load_sequence,
    save_sequence,
)
from thermoresp.quantize import (
    QuantRange,
    QuantizedImage,
    optimal_threshold,
    quantize,
    select_range,
    trim_extremes,
)
from thermoresp.track import (
    GradientMap,
    Roi,
    RoiTrack,
    TrackParams,
    fb_error,
    gradient_magnitude,
    klt_track,
    median_flow_step,
    ncc_relocalize,
    track_sequence,
)
from thermoresp.respsig import (
    RespirationSignal,
    VoxelState,
    extract_signal,
    resample_256,
    skewness_jump,
    update_boundary,
    voxel_value,
)
from thermoresp.rate import RateParams, RateSeries, estimate_rates, rsqi
from thermoresp.evaluate import AgreementReport, AlignedPair, agreement, macc_align

__all__ = [
    "__version__",
    "ThermalFrame", "SequenceMeta", "SynthScenario", "GroundTruth",
    "load_sequence", "save_sequence", "generate_synthetic",
    "QuantRange", "QuantizedImage", "trim_extremes", "optimal_threshold",
    "select_range", "quantize",
    "GradientMap", "Roi", "RoiTrack", "TrackParams", "gradient_magnitude",
    "klt_track", "fb_error", "median_flow_step", "ncc_relocalize", "track_sequence",
    "RespirationSignal", "VoxelState", "voxel_value", "update_boundary",
    "skewness_jump", "extract_signal", "resample_256",
    "RateParams", "RateSeries", "estimate_rates", "rsqi",
    "AlignedPair", "AgreementReport", "macc_align", "agreement",
]
