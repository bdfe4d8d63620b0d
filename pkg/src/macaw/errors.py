"""Exception hierarchy shared by every macaw module."""


class MacawError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(MacawError, ValueError):
    pass


class ShapeError(MacawError, ValueError):
    pass


class DimensionError(ShapeError):
    pass


class CycleError(MacawError, ValueError):
    pass


class NonFiniteError(MacawError, FloatingPointError):
    pass


class DivergedError(MacawError, RuntimeError):
    pass


class SupportError(MacawError, ValueError):
    pass


class RankError(MacawError, ValueError):
    pass


class CorruptError(MacawError, ValueError):
    pass


class VersionError(MacawError, ValueError):
    pass


class IoError(MacawError, OSError):
    pass
