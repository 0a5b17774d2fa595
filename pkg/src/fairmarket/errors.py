"""Exception types raised across the package."""


class FairMarketError(Exception):
    """Base class for all package errors."""


class InvalidSlotError(FairMarketError, ValueError):
    pass


class ShapeError(FairMarketError, ValueError):
    pass


class EmptyGroupError(FairMarketError, ValueError):
    pass


class DegenerateUtilityError(FairMarketError, ValueError):
    pass


class UnknownGroupError(FairMarketError, KeyError):
    pass


class TimeRegressionError(FairMarketError, ValueError):
    pass


class NotInitializedError(FairMarketError, RuntimeError):
    pass


class ConfigError(FairMarketError, ValueError):
    """Invalid configuration; ``field`` carries the dotted path of the offending key."""

    def __init__(self, field: str, message: str):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}" if field else message)
