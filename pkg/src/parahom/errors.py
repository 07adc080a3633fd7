"""Exception types raised by the homogenization pipeline."""


class ParahomError(Exception):
    """Base class for all package errors."""


class NonZeroMean(ParahomError, ValueError):
    pass


class NonFiniteField(ParahomError, ValueError):
    pass


class GridMismatch(ParahomError, ValueError):
    pass


class NoConvergence(ParahomError, RuntimeError):
    pass


class NonPositiveEigenfunction(ParahomError, RuntimeError):
    pass


class SignChange(ParahomError, ValueError):
    pass


class NotDivergenceFree(ParahomError, ValueError):
    pass


class NotSymmetric(ParahomError, ValueError):
    pass


class NotElliptic(ParahomError, ValueError):
    pass


class SingularSystem(ParahomError, RuntimeError):
    pass


class StiffnessCap(ParahomError, ValueError):
    pass


class NonFiniteState(ParahomError, RuntimeError):
    pass


class KernelUnderresolved(ParahomError, ValueError):
    pass


class EpsilonTooLarge(ParahomError, ValueError):
    pass


class DegenerateErrors(ParahomError, ValueError):
    pass


class ConfigError(ParahomError, ValueError):
    pass
