"""Exception hierarchy shared by every transfuse module."""


class TransFuseError(Exception):
    """Base class for all errors raised by transfuse."""


class NotFound(TransFuseError, FileNotFoundError):
    pass


class DecodeError(TransFuseError):
    pass


class ConfigError(TransFuseError, ValueError):
    pass


class EmptyDataset(TransFuseError):
    pass


class ShapeError(TransFuseError, ValueError):
    pass


class NumericalError(TransFuseError, ArithmeticError):
    pass


class LayoutError(TransFuseError):
    pass
