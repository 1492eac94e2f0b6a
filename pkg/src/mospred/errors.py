"""Exception taxonomy shared across the toolkit.

The CLI maps exceptions to exit codes through the ``exit_code`` attribute:
1 = usage/config problem, 2 = invalid input data, 3 = runtime failure.
Library callers can catch :class:`ToolkitError` (or a subclass) directly.
"""


class ToolkitError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 3


class UsageError(ToolkitError):
    """Bad command-line usage or unusable combination of options."""

    exit_code = 1


class ConfigError(UsageError):
    """Malformed or inconsistent configuration."""


class DataValidationError(ToolkitError):
    """Input data violates a documented contract."""

    exit_code = 2


class ManifestSchemaError(DataValidationError):
    """Manifest CSV header does not match the canonical schema."""


class ManifestValidationError(DataValidationError):
    """A manifest row violates an invariant.

    ``row_index`` is the zero-based position among the data rows (the header
    does not count).
    """

    def __init__(self, message: str, row_index: int | None = None):
        super().__init__(message)
        self.row_index = row_index


class AudioReadError(ToolkitError):
    """Audio file missing or unreadable."""


class AudioFormatError(DataValidationError):
    """Audio file readable but not a supported encoding."""


class EncoderInputError(ToolkitError):
    """Waveform not usable by the encoder (rate mismatch, too short)."""


class FeatureFileError(DataValidationError):
    """Precomputed feature file missing or malformed."""


class ListenerLookupError(DataValidationError):
    """Unknown listener id in strict listener mode."""


class UndefinedCorrelationError(ToolkitError):
    """Correlation requested for constant or length<2 input."""


class TrainingDivergedError(ToolkitError):
    """Training loss became non-finite."""


class CheckpointFormatError(DataValidationError):
    """Checkpoint archive missing or malformed."""


class DigestMismatchError(DataValidationError):
    """Checkpoint content digest does not match the registry entry."""


class MissingPredictionError(DataValidationError):
    """Evaluation asked for sample ids with no prediction."""

    def __init__(self, missing_ids):
        self.missing_ids = list(missing_ids)
        shown = ", ".join(self.missing_ids[:10])
        more = "" if len(self.missing_ids) <= 10 else f" (+{len(self.missing_ids) - 10} more)"
        super().__init__(f"no prediction for sample ids: {shown}{more}")
