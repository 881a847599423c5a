"""Exception hierarchy shared across the package.

The split mirrors the CLI exit-code contract: data problems (bad files,
malformed inputs, shape mismatches) are distinct from numerical failures
(non-convergence, training divergence).
"""


class CanonfaceError(Exception):
    """Base class for all package errors."""


class DataError(CanonfaceError):
    """Invalid input data: missing files, malformed formats, bad shapes."""


class NumericalError(CanonfaceError):
    """A numerical procedure failed to meet its contract."""


class ConvergenceError(NumericalError):
    """An iterative solver exhausted its iteration budget."""


class TrainingDivergedError(NumericalError):
    """Training loss became non-finite."""
