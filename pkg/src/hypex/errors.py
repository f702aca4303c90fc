"""Exception hierarchy shared by every hypex module.

Each class carries the CLI exit code it maps to, so the command layer can
translate failures without a lookup table.
"""


class HypexError(Exception):
    exit_code = 1


# -- validation (exit 2) ----------------------------------------------------

class ValidationError(HypexError, ValueError):
    exit_code = 2


class NotNormalized(ValidationError):
    pass


class NegativeMass(ValidationError):
    pass


class AxisMismatch(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class SymbolOutOfRange(ValidationError):
    pass


class AbsoluteContinuityViolated(ValidationError):
    pass


class TargetNotPositive(ValidationError):
    pass


class HypothesisViolated(ValidationError):
    """A theorem's structural assumption does not hold for the model."""


class RateNegative(ValidationError):
    pass


class RateExceeded(ValidationError):
    pass


class ConfigInvalid(ValidationError):
    pass


class AmbiguousTyping(ValidationError):
    pass


class TheoremNotApplicable(ValidationError):
    pass


class InvariantViolation(ValidationError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class InsufficientPoints(ValidationError):
    pass


class SchemeNotDeterministic(ValidationError):
    pass


# -- computational limits (exit 3) ------------------------------------------

class ComputationError(HypexError, RuntimeError):
    exit_code = 3


class Infeasible(ComputationError):
    pass


class SupportSeparation(ComputationError):
    """The minimum divergence is infinite: no feasible law is dominated by the target."""


class BudgetExceeded(ComputationError):
    pass


# -- input parsing (exit 4) -------------------------------------------------

class ParseError(HypexError, ValueError):
    exit_code = 4

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if field:
            where.append(f"field {field}")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
