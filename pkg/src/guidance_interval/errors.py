"""Exception types raised across the package."""


class InputError(ValueError):
    """Invalid argument: wrong shape, unknown label, malformed config."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation (e.g. sigma = 0 for the score)."""


class ScheduleError(RuntimeError):
    """A discretization produced a table that violates its ordering invariant."""


class SolverDivergence(FloatingPointError):
    """Non-finite state encountered while integrating the sampling ODE."""

    def __init__(self, step, chain=None, message=None):
        self.step = step
        self.chain = chain
        where = f"step {step}" if chain is None else f"chain {chain}, step {step}"
        super().__init__(message or f"non-finite state at {where}")


class SearchError(RuntimeError):
    """Every candidate of a search failed to evaluate."""


class ResumeConflict(RuntimeError):
    """A progress journal does not match the sweep being resumed."""
