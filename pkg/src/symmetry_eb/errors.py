"""Exception hierarchy.

Every error carries a ``category`` used by the CLI to pick an exit code:
``config`` (2), ``data`` (3) or ``numerical`` (4).
"""


class SymmetryEBError(Exception):
    category = "numerical"


class ConfigError(SymmetryEBError):
    category = "config"


class DataError(SymmetryEBError):
    category = "data"


class DimensionMismatch(DataError, ValueError):
    pass


class ShapeMismatch(DimensionMismatch):
    pass


class EmptyData(DataError, ValueError):
    pass


class EmptyBatch(DataError, ValueError):
    pass


class NonSquareJoint(DataError, ValueError):
    pass


class FlavorMismatch(ConfigError, ValueError):
    pass


class UnknownGenerator(ConfigError, ValueError):
    pass


class NotFitted(SymmetryEBError, RuntimeError):
    category = "config"


class NotPositiveDefinite(SymmetryEBError, ArithmeticError):
    pass


class RankDeficientDesign(SymmetryEBError, ArithmeticError):
    pass


class NumericalUnderflow(SymmetryEBError, ArithmeticError):
    pass
