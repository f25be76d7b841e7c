from typing import Iterable


class AVSError(ValueError):
    """Base class for every error raised by prefect_avs."""


class DimensionMismatchError(AVSError):
    pass


class ClassIdOutOfRangeError(AVSError):
    pass


class UnknownPaletteIdError(AVSError):
    pass


class UnknownPaletteColorError(AVSError):
    pass


class WaveformTooShortError(AVSError):
    pass


class NonFiniteError(AVSError):
    pass


class ResolutionError(AVSError):
    pass


class StageCountError(AVSError):
    pass


class NoSupervisionError(AVSError):
    pass


class PairingPoolTooSmallError(AVSError):
    pass


class ConfigurationError(AVSError):
    pass


class DivergenceError(AVSError):
    pass


class FusionAbsentError(AVSError):
    pass


class TooFewSamplesError(AVSError):
    pass


class DatasetError(AVSError):
    def __init__(self, message: str, path=None):
        self.path = path
        super().__init__(f"{message}: {path}" if path is not None else message)


class IncompatibleCheckpointError(AVSError):
    def __init__(self, mismatched: Iterable[str]):
        self.mismatched = sorted(mismatched)
        super().__init__(
            "Checkpoint is incompatible with the target architecture; "
            f"mismatched keys: {', '.join(self.mismatched)}"
        )
