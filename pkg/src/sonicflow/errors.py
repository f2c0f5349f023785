"""Exception hierarchy for the sonicflow package.

All solver errors derive from SonicflowError.  Boundary-data admissibility
failures derive from ValidationError so the CLI can map them to a dedicated
exit code.
"""


class SonicflowError(Exception):
    """Base class for all package errors."""


class ConfigError(SonicflowError):
    """Malformed or inadmissible run configuration."""


class ValidationError(SonicflowError):
    """Boundary data violates an admissibility condition."""


class NonSonicData(ValidationError):
    """State data on the curve is not sonic (or not a positive state)."""


class PressureViolation(ValidationError):
    """Pressure increases along the curve."""


class MonotonicityViolation(ValidationError):
    """Flow angle is not strictly decreasing along the curve."""


class GeometryViolation(ValidationError):
    """One of the trigonometric curve/flow-angle conditions fails."""


class DomainError(SonicflowError):
    """Argument outside the mathematical domain of an operation."""


class InversionFailure(SonicflowError):
    """Monotone inversion of the flow angle failed."""


class MarginFailure(SonicflowError):
    """Derived boundary functions have no positive sign margin."""


class SingularDenominator(SonicflowError):
    """A guarded denominator came too close to zero."""

    def __init__(self, term, value=None, where=None):
        self.term = term
        self.value = value
        self.where = where
        msg = f"denominator '{term}' too close to zero"
        if value is not None:
            msg += f" (|min| = {value:.3e})"
        if where is not None:
            msg += f" at {where}"
        super().__init__(msg)


class DomainExit(SonicflowError):
    """A characteristic left the lateral boundary before reaching t = 0."""

    def __init__(self, family, t_exit, r_value, target=None):
        self.family = family
        self.t_exit = t_exit
        self.r_value = r_value
        self.target = target
        msg = (f"characteristic of family {family} exited the domain at "
               f"t = {t_exit:.6g}, r = {r_value:.6g}")
        if target is not None:
            msg += f" (traced from node {target})"
        super().__init__(msg)


class NoContraction(SonicflowError):
    """Fixed-point iteration failed to contract within the retry budget."""


class GridMismatch(SonicflowError):
    """Two fields do not live on the same grid."""


class OutOfRange(SonicflowError):
    """Evaluation point outside the sampled range."""


class TooFewNodes(SonicflowError):
    """Not enough quadrature nodes."""


class NonPositiveState(SonicflowError):
    """Recovered density, pressure or sound speed is not positive."""
