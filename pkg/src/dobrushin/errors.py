"""Exception hierarchy shared by all modules."""


class DobrushinError(Exception):
    """Base class for every error raised by this package."""


class MalformedError(DobrushinError, ValueError):
    """Input has the wrong shape, dimension, or encoding."""


class PreconditionError(DobrushinError, ValueError):
    """An operation was called outside its domain of validity."""


class DegenerateInputError(PreconditionError):
    """Input is the zero element where a nonzero one is required."""


class CertificationError(PreconditionError):
    """A bound needs a certified upper estimate that is not available."""


class NumericalFailure(DobrushinError, RuntimeError):
    """An iterative routine failed to reach its tolerance."""


class NoFixedPointError(NumericalFailure):
    """No fixed point inside the base could be certified."""
