"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: usage problems exit 2, data problems
exit 3, numerical-state problems exit 4.
"""


class MasterprintError(Exception):
    """Base class for all toolkit errors."""


class DataError(MasterprintError):
    """Bad or missing input data (files, galleries, formats)."""


class WeightFormatError(DataError):
    """Weight blob does not start with the expected magic/version."""


class ModelStructureError(DataError):
    """Layer chain of a generator model is internally inconsistent."""


class WeightCorruptionError(DataError):
    """Weight blob is truncated, fails its checksum, or holds non-finite values."""


class IngestError(DataError):
    """Gallery source directory cannot be ingested."""


class CalibrationError(DataError):
    """Threshold calibration is impossible on the given gallery."""


class ConfigurationError(DataError):
    """Mismatched or missing run configuration (matcher ids, thresholds, paths)."""


class NumericalStateError(MasterprintError):
    """Optimizer state became numerically invalid (non-finite, non-PSD)."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
