"""Exception hierarchy shared by the library and the command line."""


class RofigsError(Exception):
    """Base class for errors caused by bad input rather than bugs."""


class ParseError(RofigsError):
    pass


class ValidationError(RofigsError):
    pass


class SchemaError(RofigsError):
    pass


class ConfigError(RofigsError):
    pass


class UnsupportedStrategyError(RofigsError):
    pass


class StratificationError(RofigsError):
    pass


class UndefinedMetricError(RofigsError):
    pass


class TaskError(RofigsError):
    pass
