"""Exception hierarchy shared by all cpslab modules.

The split mirrors the CLI exit codes: configuration problems, numerical
failures, and violated model invariants are reported distinctly.
"""


class CpsLabError(Exception):
    """Base class for all cpslab errors."""


class ValidationError(CpsLabError):
    """Bad inputs: malformed configs, out-of-domain parameters, missing files."""


class NumericalError(CpsLabError):
    """A numerical procedure failed (factorization, convergence, overflow)."""


class FactorizationError(NumericalError):
    """Covariance factorization failed even after jitter escalation."""

    def __init__(self, message, leading_minor=None):
        super().__init__(message)
        self.leading_minor = leading_minor


class ConvergenceError(NumericalError):
    """An iterative solver exhausted its iteration budget."""


class LadderOverflowError(NumericalError):
    """Band-exit ladder exceeded the configured maximum stop count."""

    def __init__(self, message, count=None):
        super().__init__(message)
        self.count = count


class InvariantViolation(CpsLabError):
    """A constructed object failed one of its contractual invariants."""


class SandwichViolation(InvariantViolation):
    """Shadow price left the certified bid-ask band."""

    def __init__(self, message, path_id=None, grid_index=None):
        super().__init__(message)
        self.path_id = path_id
        self.grid_index = grid_index


class InteriorError(InvariantViolation):
    """An increment cloud does not contain the origin in its hull interior."""

    def __init__(self, message, stop_index=None, bucket=None):
        super().__init__(message)
        self.stop_index = stop_index
        self.bucket = bucket


class DegenerateCloudError(InvariantViolation):
    """Increment cloud violates a hypothesis of the tilting construction."""
