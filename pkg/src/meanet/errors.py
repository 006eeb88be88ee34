"""Exception types shared across the package."""


class MeaNetError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(MeaNetError, ValueError):
    pass


class ShapeError(MeaNetError, ValueError):
    pass


class ContractError(MeaNetError, RuntimeError):
    """An API was used out of order or with mismatched artifacts."""


class ConfigError(MeaNetError, ValueError):
    pass


class FormatError(MeaNetError, ValueError):
    """A file on disk is malformed. The message names the offending offset or line."""


class CalibrationError(MeaNetError, ValueError):
    pass
