"""Exception hierarchy shared by every module.

The CLI maps each class onto an exit code through ``exit_code``.
"""


class IMCFError(Exception):
    """Base class for all package errors."""

    exit_code = 3


# precondition violations (exit code 4)


class PreconditionError(IMCFError):
    exit_code = 4


class DomainError(PreconditionError):
    """A point or stencil lies outside the valid time-coordinate range."""


class NotTimelike(PreconditionError):
    pass


class NotSpacelike(PreconditionError):
    """|Du|^2 reached the spacelike margin somewhere on the grid."""


class NonPositiveH(PreconditionError):
    """Mean curvature is not strictly positive where the flow needs it."""


class InitialDataInvalid(PreconditionError):
    pass


class NoHorizon(PreconditionError):
    pass


class UnsupportedTopology(PreconditionError):
    pass


class NotPositive(PreconditionError):
    pass


class BarrierViolated(PreconditionError):
    pass


class RangeError(PreconditionError, ValueError):
    pass


class OutOfFoliation(PreconditionError):
    pass


class OraclePrecondition(PreconditionError):
    """Oracle comparison requested on data that is not spatially homogeneous."""


# numerical failures (exit code 3)


class NumericalError(IMCFError):
    exit_code = 3


class SingularMetric(NumericalError):
    pass


class NumericalBlowup(NumericalError):
    pass


class StiffnessFailure(NumericalError):
    pass


class Unbounded(NumericalError):
    """Proper-time quadrature to the future end did not converge."""


class ConfigError(IMCFError, ValueError):
    """Invalid configuration; carries every violation with its key path."""

    exit_code = 2

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
