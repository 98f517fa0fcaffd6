"""Exception hierarchy shared by every module."""


class GGError(Exception):
    """Base class for all errors raised by ggformer."""


class DimensionError(GGError, ValueError):
    pass


class ConfigError(GGError, ValueError):
    pass


class PartitionError(ConfigError):
    """Token grid not divisible by the partition side."""


class NumericError(GGError, ArithmeticError):
    pass


class StateError(GGError, RuntimeError):
    pass


class FormatError(GGError, ValueError):
    """Malformed GGT1 tensor file or checkpoint manifest."""
