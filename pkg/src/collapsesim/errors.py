"""Exception hierarchy shared by every module."""


class CollapseSimError(Exception):
    """Base class for all errors raised by collapsesim."""


class DomainError(CollapseSimError, ValueError):
    """An argument lies outside the domain of the operation."""


class ResolutionError(CollapseSimError, ValueError):
    """A length scale is too small to be resolved on the grid."""


class StepSizeError(CollapseSimError, ValueError):
    """A time step violates a stability or accuracy bound.

    ``suggested_dt`` carries the largest step that would be accepted.
    """

    def __init__(self, message, suggested_dt=None):
        super().__init__(message)
        self.suggested_dt = suggested_dt

    def __reduce__(self):
        return type(self), (self.args[0], self.suggested_dt)


class NumericalCollapseError(CollapseSimError, ArithmeticError):
    """A collapse was applied at an outcome with negligible probability."""


class InvariantError(CollapseSimError, AssertionError):
    """A state failed one of its structural invariants."""


class TrajectoryError(CollapseSimError, RuntimeError):
    """A trajectory inside an ensemble failed; ``seed`` allows replay."""

    def __init__(self, message, seed=None):
        super().__init__(message)
        self.seed = seed

    def __reduce__(self):
        return type(self), (self.args[0], self.seed)


class BoundaryWarning(UserWarning):
    """Probability leaked close to the periodic boundary."""


class ConfigError(CollapseSimError, ValueError):
    """An experiment config is malformed; ``problems`` lists ``(field, message)``."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(f"{f}: {m}" for f, m in self.problems))

    def __reduce__(self):
        return type(self), (self.problems,)
