"""Exception hierarchy for the openvein pipeline.

Every failure mode gets its own class so callers can distinguish degenerate
data (ZeroNorm, InsufficientPositives) from misuse (DimensionMismatch,
KTooLarge) from broken files (BadMagic, CorruptHeader).
"""


class OpenVeinError(Exception):
    """Base class for all library errors."""


# -- embedding geometry ------------------------------------------------------

class ZeroNormError(OpenVeinError):
    """Vector norm below the degeneracy threshold; cannot be normalized."""


class DimensionMismatchError(OpenVeinError):
    """Operands do not share the same embedding dimension."""


class EmptyEnrollmentError(OpenVeinError):
    """Prototype requested from an empty enrollment sequence."""


class EmptyGalleryError(OpenVeinError):
    """Scoring or decision requested against a gallery with no prototypes."""


class DuplicateClassError(OpenVeinError):
    """Gallery construction saw the same class id twice."""


# -- metric losses and training ----------------------------------------------

class InsufficientPositivesError(OpenVeinError):
    """Some label in the batch has a single sample, so it has no positive."""


class SingleClassError(OpenVeinError):
    """Batch contains one distinct label, so no negatives exist."""


class SingleSampleError(OpenVeinError):
    """Pairwise loss needs at least two samples."""


class MissingCenterError(OpenVeinError):
    """A batch label has no entry in the class-center map."""


class TooFewClassesError(OpenVeinError):
    """Dataset has fewer distinct classes than the sampler requires."""


class NonFiniteLossError(OpenVeinError):
    """Training loss became NaN/inf (learning rate too high)."""


# -- open-set decision engine --------------------------------------------------

class KTooLargeError(OpenVeinError):
    """Decision statistic requested more neighbours than the gallery holds."""


class EmptyCalibrationSideError(OpenVeinError):
    """Calibration needs both known and unknown score records."""


class UnattainableTargetError(OpenVeinError):
    """No candidate threshold satisfies the requested FPR target."""


# -- evaluation metrics --------------------------------------------------------

class EmptySideError(OpenVeinError):
    """Curve computation needs nonempty positive and negative score sets."""


class MissingRankError(OpenVeinError):
    """CMC computation found a known probe without a rank."""


class EmptyInputError(OpenVeinError):
    """Aggregation over an empty report sequence."""


class IncompleteReportError(OpenVeinError):
    """Report is missing a scalar required by the output format."""


# -- protocol construction -----------------------------------------------------

class TooFewSubjectsError(OpenVeinError):
    """Not enough subjects to build a known/unknown partition."""


class AllClassesDroppedError(OpenVeinError):
    """Every class failed the minimum-sample requirement."""


class InsufficientSamplesError(OpenVeinError):
    """A class has too few samples for the requested enrollment size."""


class SingleSessionError(OpenVeinError):
    """Session-based assignment needs at least two distinct sessions."""


class ValidationTooSmallError(OpenVeinError):
    """Pseudo-unknown selection needs at least two validation classes."""


# -- file formats ---------------------------------------------------------------

class BadMagicError(OpenVeinError):
    """File does not start with the expected magic bytes."""


class VersionUnsupportedError(OpenVeinError):
    """File declares a format version this library cannot read."""


class CorruptHeaderError(OpenVeinError):
    """Header fields are inconsistent with the file payload."""


class NonFiniteValueError(OpenVeinError):
    """A stored or to-be-stored floating value is NaN or infinite."""
