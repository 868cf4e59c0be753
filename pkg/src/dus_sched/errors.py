"""Exception types shared across the package."""


class DusError(Exception):
    """Base class for all errors raised by this package."""


# -- sequence state ----------------------------------------------------------

class PositionAlreadyRevealed(DusError):
    pass


class PositionOutsideCurrentBlock(DusError):
    pass


class InvalidToken(DusError):
    pass


class BlockIncomplete(DusError):
    pass


# -- schedules and planners --------------------------------------------------

class InvalidParams(DusError):
    pass


class MissingScore(DusError):
    pass


class EmptyInput(DusError):
    pass


class StepOutOfRange(DusError):
    pass


class InvalidGapParam(DusError):
    pass


# -- exact chain oracle ------------------------------------------------------

class EnumerationTooLarge(DusError):
    pass


class PositionNotMasked(DusError):
    pass


class NoConvergence(DusError):
    pass


class InvalidDistribution(DusError):
    pass


class InvalidModel(DusError):
    pass


class NotAPartition(DusError):
    pass


# -- decode engine -----------------------------------------------------------

class DenoiserProtocolError(DusError):
    pass


class RoundCapExceeded(DusError):
    pass


# -- metrics -----------------------------------------------------------------

class NoPairs(DusError):
    pass


class EmptyTrace(DusError):
    pass


class MixedParams(DusError):
    pass
