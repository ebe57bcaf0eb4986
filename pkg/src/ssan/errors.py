"""Exception hierarchy shared across the package."""


class SSANError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(SSANError, ValueError):
    pass


class InputError(SSANError, ValueError):
    pass


class ContractError(SSANError, RuntimeError):
    pass


class ConfigError(SSANError, ValueError):
    pass


class FormatError(SSANError, ValueError):
    pass


class NumericError(SSANError, ArithmeticError):
    """A loss or activation became NaN/Inf."""
