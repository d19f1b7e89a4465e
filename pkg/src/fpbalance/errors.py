"""Exception types raised across the package."""


class FpBalanceError(Exception):
    """Base class for all package errors."""


# dataset
class MalformedRow(FpBalanceError, ValueError):
    pass


class UnknownLabel(FpBalanceError, ValueError):
    pass


class EmptyFile(FpBalanceError, ValueError):
    pass


class EmptyInput(FpBalanceError, ValueError):
    pass


class DomainError(FpBalanceError, ValueError):
    pass


class ClassTooSmall(FpBalanceError, ValueError):
    pass


class RatioTooLarge(FpBalanceError, ValueError):
    pass


class BadGeometry(FpBalanceError, ValueError):
    pass


# oversamplers
class KTooLarge(FpBalanceError, ValueError):
    pass


class TooFewSamples(FpBalanceError, ValueError):
    pass


# generative models
class ShapeMismatch(FpBalanceError, ValueError):
    pass


class NonFiniteLoss(FpBalanceError, ArithmeticError):
    """Training diverged (loss became nan or inf)."""


# classifier
class SingleClass(FpBalanceError, ValueError):
    pass


class ConfigurationError(FpBalanceError, ValueError):
    pass


# metrics
class LengthMismatch(FpBalanceError, ValueError):
    pass


class LabelOutOfRange(FpBalanceError, ValueError):
    pass


class ZeroBaseline(FpBalanceError, ZeroDivisionError):
    """Relative change is undefined for a zero baseline."""


# harness
class TooManyTrials(FpBalanceError, ValueError):
    pass
