"""Exception types shared across the pipeline."""


class ThermorespError(Exception):
    """Base class for all library errors."""


class ConfigError(ThermorespError):
    """Invalid configuration or parameters (CLI exit code 2)."""


class FormatError(ThermorespError):
    """Malformed or inconsistent input data (CLI exit code 3)."""


class AlignmentError(ThermorespError):
    """Waveform alignment failed or left too little overlap (exit code 3)."""


class InsufficientDataError(ThermorespError):
    """Too few samples or windows to compute a result (CLI exit code 4)."""


class RelocalizationFailed(ThermorespError):
    """Template search could not produce a usable match."""


class PointLoss(ThermorespError):
    """Too few reliable points survived a tracking step."""

    def __init__(self, n_points: int):
        super().__init__(f"only {n_points} reliable points survived the step")
        self.n_points = n_points


class PipelineStageError(ThermorespError):
    """Wraps an error with the pipeline stage it occurred in."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause
