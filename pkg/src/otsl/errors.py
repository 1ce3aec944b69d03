"""Exception hierarchy. Each class maps to a CLI exit code."""


class OTSLError(Exception):
    exit_code = 3


class ConfigError(OTSLError, ValueError):
    exit_code = 2


class EmptyDomain(ConfigError):
    pass


class UnboundedDomain(ConfigError):
    pass


class NumericalError(OTSLError):
    exit_code = 3


class NonConvergent(NumericalError):
    pass


class QuadratureFailure(NonConvergent):
    pass


class EigenFailure(NumericalError):
    pass


class DegenerateBasis(NumericalError):
    pass


class UnbalancedMasses(ConfigError):
    pass


class SizeExceeded(ConfigError):
    pass


class TooManyAtoms(ConfigError):
    pass


class ZeroMassRegion(NumericalError):
    pass


class InfiniteMoment(ConfigError):
    pass


class TooLargeForExact(ConfigError):
    pass


class DisconnectedCover(NumericalError):
    exit_code = 1


class IsolatedVertex(NumericalError):
    exit_code = 1


class CellWithoutAtoms(NumericalError):
    pass


class ZeroSpectralGap(NumericalError):
    exit_code = 1


class UndefinedAtAtom(NumericalError):
    pass


class InsufficientScales(ConfigError):
    pass
