"""Exception hierarchy shared by all modules."""


class AdoptionModelError(Exception):
    """Base class for every error raised by this package."""


class NetworkError(AdoptionModelError, ValueError):
    pass


class NegativeWeight(NetworkError):
    def __init__(self, i, j, value):
        self.index = (i, j)
        self.value = value
        super().__init__(f"negative weight {value!r} at entry ({i}, {j})")


class RowSumViolation(NetworkError):
    def __init__(self, row, row_sum, tolerance):
        self.row = row
        self.row_sum = row_sum
        super().__init__(
            f"row {row} sums to {row_sum!r} (worst row; tolerance {tolerance:g})"
        )


class NotStronglyConnected(NetworkError):
    def __init__(self, source, target):
        self.pair = (source, target)
        super().__init__(f"node {target} is not reachable from node {source}")


class ValidationError(AdoptionModelError, ValueError):
    """A domain-type invariant does not hold."""

    def __init__(self, message, field=None, index=None):
        self.field = field
        self.index = index
        super().__init__(message)


class ParseError(AdoptionModelError, ValueError):
    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class InvariantBreach(AdoptionModelError, ArithmeticError):
    """A state update left the simplex/box by more than floating-point dust."""

    def __init__(self, message, step=None):
        self.step = step
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)


class NoConvergence(AdoptionModelError, RuntimeError):
    pass


class SingularSystem(AdoptionModelError, ArithmeticError):
    pass


class SingularDenominator(AdoptionModelError, ArithmeticError):
    pass


class ConvergedToFree(UserWarning):
    """Fixed-point search fell into the adoption-free equilibrium although
    the reproduction-number premise suggested a diffused one."""


class Infeasible(AdoptionModelError):
    pass


class InfeasibleAtStart(Infeasible):
    pass


class LostFeasibility(Infeasible):
    def __init__(self, t, deviation):
        self.t = t
        self.deviation = deviation
        super().__init__(f"terminal tolerance missed at t={t} (deviation {deviation:.3e})")
