"""Exception hierarchy for cbilab."""


class CBIError(Exception):
    """Base class for all library errors."""


class InadmissibleMeasure(CBIError, ValueError):
    """Jump measure parameters violate the integrability conditions for its role."""


class InvalidOrder(CBIError, ValueError):
    pass


class QuadratureFailure(CBIError, ArithmeticError):
    pass


class InadmissibleModel(CBIError, ValueError):
    """Model parameters outside the subcritical CBI class."""


class SecondMomentInfinite(CBIError, ArithmeticError):
    pass


class DegenerateR(CBIError):
    """R is linear (sigma = 0 and mu = 0); it has no interior minimum."""


class UnboundedMinimum(CBIError, AssertionError):
    pass


class OutOfDomain(CBIError, ValueError):
    pass


class StepSizeUnderflow(CBIError, ArithmeticError):
    def __init__(self, message, t_last=None, state_last=None):
        super().__init__(message)
        self.t_last = t_last
        self.state_last = state_last


class IncompatibleScheme(CBIError, ValueError):
    pass


class StepTooCoarse(CBIError, ValueError):
    pass


class TiltUnavailable(CBIError):
    pass


class ConfigError(CBIError, ValueError):
    pass
