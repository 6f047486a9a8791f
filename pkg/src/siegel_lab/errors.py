"""Exception hierarchy shared across the package."""


class SiegelLabError(Exception):
    pass


# continued fractions
class PrecisionExhausted(SiegelLabError):
    pass


class RationalInput(SiegelLabError, ValueError):
    pass


class InsufficientCoefficients(SiegelLabError, IndexError):
    pass


# polynomials
class IndexOutOfRange(SiegelLabError, IndexError):
    pass


class ZeroCriticalPoint(SiegelLabError, ValueError):
    pass


class NotACriticalPoint(SiegelLabError, ValueError):
    pass


class RootFindingDiverged(SiegelLabError, ArithmeticError):
    pass


# orbits
class NonFinite(SiegelLabError, ArithmeticError):
    pass


class IndexBeyondEscape(SiegelLabError, IndexError):
    pass


class EscapedOrbit(SiegelLabError):
    pass


class EmptySet(SiegelLabError, ValueError):
    pass


# circle maps
class UnconvergedWarning(UserWarning):
    """Rotation-number estimate did not reach the requested tolerance."""


class InverseBisectionFailed(SiegelLabError, ArithmeticError):
    pass


class RotationMismatch(SiegelLabError, ValueError):
    pass


class NotMonotone(SiegelLabError, ValueError):
    pass


class DegenerateQuadruple(SiegelLabError, ValueError):
    pass


class TooFewSubintervals(SiegelLabError, ValueError):
    pass


class DerivativeVanishes(SiegelLabError, ArithmeticError):
    pass


# Blaschke models
class BracketExhausted(SiegelLabError):
    pass


class OrbitTooSparse(SiegelLabError):
    pass


class ExtensionInversionFailed(SiegelLabError, ArithmeticError):
    pass


class DegenerateCell(SiegelLabError):
    pass


class GridTooCoarse(SiegelLabError):
    pass


# polygon maps
class InvalidBreakpoints(SiegelLabError, ValueError):
    pass


class RecursionDepthExceeded(SiegelLabError, RecursionError):
    pass


class DegenerateTriangle(SiegelLabError, ArithmeticError):
    pass


class SingularDifferential(SiegelLabError, ArithmeticError):
    pass


# front end
class ConfigParse(SiegelLabError, ValueError):
    pass


class IoFailure(SiegelLabError, OSError):
    pass
