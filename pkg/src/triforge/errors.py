"""Exception hierarchy for the forge pipeline.

Every error raised by the package derives from ForgeError. The three
broad flavors matter for exit-code / HTTP-status mapping: ValidationError
(bad inputs or contract violations), IoError (filesystem / format
problems), and BackendError (sidecar process trouble).
"""


class ForgeError(Exception):
    """Base class for all pipeline errors."""


class ValidationError(ForgeError):
    """Inputs violate a documented precondition."""


class IoError(ForgeError):
    """File missing, unreadable, or structurally broken."""


class BackendError(ForgeError):
    """A translation/embedding backend failed."""


# --- core / file formats ---------------------------------------------------

class FormatError(IoError):
    """Decoded file has the wrong channels, dtype, or layout."""


class MaskValueError(FormatError):
    """Mask PNG contains a pixel value other than 0 or 255."""


class MetaMissing(ValidationError):
    """No ModalityMeta available for a requested modality."""


class MagicMismatch(FormatError):
    """Binary file does not start with the expected magic bytes."""


class TruncatedPayload(FormatError):
    """Binary payload shorter than its header promises."""


class UnknownDtype(FormatError):
    """Tensor file header carries an unrecognized dtype code."""


class SchemaError(ValidationError):
    """Manifest JSON does not match the expected schema."""


class DuplicateId(ValidationError):
    """Two records share the same id."""


class MissingFile(IoError):
    """A path referenced by a manifest or request does not exist."""


# --- mask geometry ----------------------------------------------------------

class NoSeeds(ValidationError):
    """Distance transform requested with zero seed pixels."""


class EmptyMask(ValidationError):
    """Operation requires at least one foreground pixel."""


class DimMismatch(ValidationError):
    """Rasters or vectors that must share dimensions do not."""


# --- retrieval --------------------------------------------------------------

class ZeroNormVector(ValidationError):
    """Embedding store contains a vector with zero Euclidean norm."""


class ZeroNorm(ValidationError):
    """Cosine similarity of a zero-norm vector is undefined."""


class EmptyStore(ValidationError):
    """Query issued against an embedding store with no rows."""


class LengthMismatch(ValidationError):
    """Sequences that must have equal length do not."""


class EmptyList(ValidationError):
    """Aggregation over zero score vectors."""


# --- translation backends ---------------------------------------------------

class BackendUnavailable(BackendError):
    """Backend process is gone or never came up."""


class ProtocolError(BackendError):
    """Sidecar sent something outside the line-JSON contract."""


class Timeout(BackendError):
    """Sidecar did not answer within the deadline."""


class NonzeroExit(BackendError):
    """Sidecar process terminated with a nonzero status."""


# --- metrics ----------------------------------------------------------------

class TooFewSamples(ValidationError):
    """Covariance-based metrics need at least two rows per set."""


class NotSymmetric(ValidationError):
    """Matrix expected to be symmetric is not, beyond tolerance."""


class NoConvergence(ForgeError):
    """Iterative eigensolver failed to converge."""


class UnknownLabel(ValidationError):
    """Label outside the declared class set."""


class MissingPair(ValidationError):
    """Sample id present in one manifest but not the other."""
