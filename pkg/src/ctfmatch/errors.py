"""Exception hierarchy for the matching pipeline."""


class MatchError(Exception):
    """Base class for every error raised by ctfmatch."""


# geometry
class DegeneratePoint(MatchError, ValueError):
    pass


class RankDeficient(MatchError, ValueError):
    pass


class InsufficientMatches(MatchError, ValueError):
    pass


class SingularMatrix(MatchError, ValueError):
    pass


class EmptyInput(MatchError, ValueError):
    pass


class InvalidRange(MatchError, ValueError):
    pass


# edge maps
class ImageTooSmall(MatchError, ValueError):
    pass


class EmptyMask(MatchError, ValueError):
    pass


# sampling / features / attention
class BadStride(MatchError, ValueError):
    pass


class WindowOutOfRange(MatchError, ValueError):
    pass


class DimMismatch(MatchError, ValueError):
    pass


class EmptyKeys(MatchError, ValueError):
    pass


# consistency
class ZeroDenominator(MatchError, ValueError):
    pass


class DegenerateSet(MatchError, ValueError):
    pass


class DegenerateVector(MatchError, ValueError):
    pass


class TooFewMatches(MatchError, ValueError):
    pass


class LengthMismatch(MatchError, ValueError):
    pass


# refinement / losses
class BorderSkip(MatchError):
    """Raised when a correlation window does not fit inside the fine grid."""


class EmptyGroundTruth(MatchError, ValueError):
    pass


# harness
class NoMasks(MatchError):
    pass


class IoFailure(MatchError, OSError):
    pass


class PipelineDegenerate(MatchError):
    """A sample could not be matched (too few matches, singular estimate, ...)."""
