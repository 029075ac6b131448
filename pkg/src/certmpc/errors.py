"""Exception types raised by the package."""


class MpcError(Exception):
    """Base class for all errors raised by certmpc."""


class DimensionMismatch(MpcError, ValueError):
    pass


class InvalidSpec(MpcError, ValueError):
    """A model or MPC design violates one of its structural requirements."""


class NotControllable(InvalidSpec):
    pass


class NotPositiveDefinite(InvalidSpec):
    pass


class NonConvergence(MpcError, RuntimeError):
    pass


class NonFiniteIterate(MpcError, FloatingPointError):
    pass


class FactorizationFailure(MpcError, RuntimeError):
    pass


class OracleNonConvergence(NonConvergence):
    pass


class SingularSystem(MpcError, RuntimeError):
    pass


class KappaNotContractive(MpcError, ValueError):
    pass


class CertificationFailure(MpcError, RuntimeError):
    """The certified iteration count does not yield ``beta < 1``."""


class EmptySampleSet(MpcError, ValueError):
    pass


class EmptyGrid(EmptySampleSet):
    pass


class ConfigParseError(MpcError, ValueError):
    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if field is not None:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
