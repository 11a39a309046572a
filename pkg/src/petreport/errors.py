"""Exception types shared across the pipeline.

The CLI maps these onto distinct exit codes, so raising the right class
is part of the public contract (see cli.EXIT_CODES).
"""


class PetReportError(Exception):
    """Base class for all package errors."""


class ConfigError(PetReportError):
    """Bad, unknown, or inconsistent configuration values."""


class DataError(PetReportError):
    """Problems with input data: files, volumes, metadata, reports."""


class InvalidMetadataError(DataError):
    """Scan metadata violates its constraints (weight, dose, timestamps)."""


class InvalidVolumeError(DataError):
    """Volume payload violates its constraints (shape, values, modality)."""


class NoBodyFoundError(DataError):
    """Body-mask provider produced an empty mask."""


class InvalidLandmarkError(DataError):
    """Landmark provider output unusable for region splitting."""


class ReportParseError(DataError):
    """Report document is missing required sections."""


class UnknownCenterError(DataError):
    """No healthy template registered for a (center, gender) key."""


class SplitError(DataError):
    """Region splitting of a report failed."""

    def __init__(self, message, raw_text=None):
        super().__init__(message)
        self.raw_text = raw_text


class PhantomSpecError(DataError):
    """Synthetic case specification is internally inconsistent."""


class ExtractionError(PetReportError):
    """Label extraction failed after retries; carries the raw response."""

    def __init__(self, message, raw_response=None):
        super().__init__(message)
        self.raw_response = raw_response


class UndefinedMetricError(PetReportError):
    """Metric requested on input for which it is undefined (e.g. empty corpus)."""
