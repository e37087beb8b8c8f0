"""Exception hierarchy for the paracosm package.

Every error raised on purpose by this package derives from ParacosmError so
callers can catch one type at process boundaries (CLI, HTTP service) and map
it to an exit code or status code.
"""

from __future__ import annotations


class ParacosmError(Exception):
    """Base class for all package errors."""


# --- vector / fusion ---------------------------------------------------------


class NonFiniteInput(ParacosmError):
    """A vector contains NaN or Inf components."""


class DimensionMismatch(ParacosmError):
    """Vectors of different dimensionality were combined or compared."""


class EmptyTermSet(ParacosmError):
    """A fusion was requested with no active (enabled and provided) terms."""


class ZeroVector(ParacosmError):
    """A zero vector reached an operation that requires a direction."""


class EmptyGallery(ParacosmError):
    """Ranking was requested against an empty gallery."""


class UnknownImageId(ParacosmError):
    """An image id was not found in the gallery or store."""


class DegenerateVectorWarning(UserWarning):
    """Normalizing a zero vector: the zero vector is returned unchanged."""


# --- backends ---------------------------------------------------------------


class BackendError(ParacosmError):
    """Base class for model-backend failures."""


class BackendTimeout(BackendError):
    """All retry attempts timed out.

    Attributes:
        attempts: Total number of attempts made (initial call + retries).
    """

    def __init__(self, message: str, attempts: int):
        super().__init__(message)
        self.attempts = attempts


class BackendRejected(BackendError):
    """The backend answered with a non-retryable refusal."""


class MalformedResponse(BackendError):
    """The backend answered 2xx but the payload did not match the wire shape."""


class EmptyCaption(BackendError):
    """A caption backend returned empty or whitespace-only text."""


class DimensionDrift(BackendError):
    """An embedding backend returned a vector of undeclared dimensionality."""


# --- prompts ----------------------------------------------------------------


class MissingSharedConcept(ParacosmError):
    """A dataset kind requiring a shared concept was rendered without one."""


class UnknownDataset(ParacosmError):
    """No template set exists for the requested dataset kind."""


# --- feature store ----------------------------------------------------------


class DuplicateImageId(ParacosmError):
    """Two gallery features with the same image id in one store."""


class CorruptStore(ParacosmError):
    """Store files exist but fail structural validation (magic, sizes)."""


class VersionUnsupported(ParacosmError):
    """The store was written by an unsupported format version."""


class MissingTermEmbedding(ParacosmError):
    """Re-fusion needs a per-term matrix the store does not carry."""


# --- datasets ---------------------------------------------------------------


class SchemaError(ParacosmError):
    """An annotation record violates the expected schema.

    Attributes:
        field: Path of the offending field, e.g. ``records[3].img_set.members``.
    """

    def __init__(self, message: str, field: str = ""):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


class InvalidRate(ParacosmError):
    """A rate parameter fell outside [0, 1]."""


# --- pipeline / metrics -----------------------------------------------------


class EncoderMismatch(ParacosmError):
    """Query feature and store come from different encoder families."""


class MissingModificationText(ParacosmError):
    """The active configuration needs modification text the record lacks."""


class FailureThresholdExceeded(ParacosmError):
    """Per-item failures during preprocessing exceeded the allowed ratio.

    Attributes:
        failures: List of (item_id, error_message) pairs.
    """

    def __init__(self, message: str, failures: list[tuple[str, str]]):
        super().__init__(message)
        self.failures = failures


class LengthMismatch(ParacosmError):
    """Rankings and records differ in count."""


class MissingSubset(ParacosmError):
    """A subset metric was requested for a record without subset ids."""


class EmptyGT(ParacosmError):
    """A record carries no ground-truth target ids."""
