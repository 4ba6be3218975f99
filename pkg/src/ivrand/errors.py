"""Exception hierarchy shared across the package."""


class IVError(ValueError):
    """Base class for every structured failure raised by ivrand."""


class ValidationError(IVError):
    """Raw input could not be turned into an :class:`~ivrand.core.IvDataset`."""


class LengthMismatch(ValidationError):
    pass


class NonBinaryInstrument(ValidationError):
    pass


class DegenerateArm(ValidationError):
    pass


class NonFiniteValue(ValidationError):
    pass


class TooFewUnits(ValidationError):
    pass


class ZeroFirstStage(IVError):
    """The estimated effect of the instrument on treatment is exactly zero."""


class ZeroVariance(IVError):
    pass


class ZeroOutcomeVariance(IVError):
    pass


class EnumerationTooLarge(IVError):
    pass


class GridTooCoarse(IVError):
    pass


class Unidentified(IVError):
    pass


class InvalidGamma(IVError):
    pass


class RankDeficient(IVError):
    pass


class TooFewRows(IVError):
    pass
