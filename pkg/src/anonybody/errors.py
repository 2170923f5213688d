"""Exception and warning types shared across the package."""

from __future__ import annotations


class AnonybodyError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(AnonybodyError, ValueError):
    """An argument violates an operation's preconditions."""


class DegenerateGeometryError(AnonybodyError):
    """A crop or box collapsed to zero size."""


class NotFoundError(AnonybodyError):
    """A referenced resource (file, image id) does not exist."""


class UnsupportedFormatError(AnonybodyError):
    """A file or encoding is recognized but deliberately not supported."""


class CorruptFileError(AnonybodyError):
    """A file exists but cannot be decoded."""


class AnnotationParseError(AnonybodyError):
    """Annotation JSON violates the expected schema.

    ``json_path`` points at the offending element, e.g. ``annotations[3].segmentation``.
    """

    def __init__(self, message: str, json_path: str = "$"):
        super().__init__(f"{json_path}: {message}")
        self.json_path = json_path


class AnnotationIntegrityError(AnonybodyError):
    """Annotations reference ids that do not exist."""

    def __init__(self, message: str, dangling_ids: list | None = None):
        super().__init__(message)
        self.dangling_ids = list(dangling_ids or [])


class InvalidDistributionError(AnonybodyError):
    """A probability row is not a valid distribution."""

    def __init__(self, message: str, row_index: int):
        super().__init__(f"row {row_index}: {message}")
        self.row_index = row_index


class InsufficientSamplesError(AnonybodyError):
    """Too few samples to estimate the requested statistic."""


class TransportError(AnonybodyError):
    """A backend could not be reached. Retryable."""

    def __init__(self, message: str, endpoint: str = ""):
        super().__init__(f"{message} (endpoint: {endpoint})" if endpoint else message)
        self.endpoint = endpoint


class BackendError(AnonybodyError):
    """A backend answered with an error of its own."""


class ProtocolError(AnonybodyError):
    """A backend answered with a malformed or contract-violating response."""


class BatchDispatchError(AnonybodyError):
    """Some members of a batched backend call failed.

    ``failures`` maps request index to the underlying exception; ``results``
    holds the successful outputs keyed by request index.
    """

    def __init__(self, failures: dict, results: dict):
        indices = sorted(failures)
        super().__init__(f"batch failed for request indices {indices}")
        self.failures = failures
        self.results = results


class OutputCollisionError(AnonybodyError):
    """An output path already exists and resume was not requested."""


class NumericalQualityWarning(UserWarning):
    """A numerical result needed clamping beyond the expected noise floor."""
