"""Exception taxonomy shared across the package.

Two broad families matter to callers: configuration/usage problems (exit
code 2 at the CLI) and numerical/verification failures (exit code 3).
"""


class AgentcpError(Exception):
    """Base class for all package-specific errors."""


class ParameterError(AgentcpError, ValueError):
    """A caller-supplied argument violates a documented precondition."""


class ShapeError(ParameterError):
    """Array/bag dimensions are inconsistent."""


class ComplexityCapError(ParameterError):
    """An enumeration would exceed the configured operation cap."""


class ConfigError(AgentcpError, ValueError):
    """A config document is malformed, incomplete, or contradictory."""


class NumericalError(AgentcpError, ArithmeticError):
    """A numerical routine failed (factorization, non-convergence, ...)."""


class DegenerateDensityError(NumericalError):
    """All permutation densities vanished; weights are undefined."""


class BoundInfeasibleError(AgentcpError):
    """No candidate bound satisfies the proposal-capping constraint.

    Carries the smallest candidate value and its constraint value so the
    caller can decide on a fallback policy.
    """

    def __init__(self, message, smallest_candidate=None, constraint_value=None):
        super().__init__(message)
        self.smallest_candidate = smallest_candidate
        self.constraint_value = constraint_value
