"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class BevAdaptError(Exception):
    """Base class for all errors raised by bev_domain_adapt."""


class ShapeError(BevAdaptError, ValueError):
    """Tensor extents or channel counts do not agree."""


class DataError(BevAdaptError, ValueError):
    """Input files or records are missing, oversized or fail schema checks."""


class NumericalError(BevAdaptError, ArithmeticError):
    """A loss, gradient or finite-difference evaluation became non-finite."""
