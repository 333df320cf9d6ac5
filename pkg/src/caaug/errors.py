"""Exception types raised by caaug."""


class CaAugError(Exception):
    """Base class for all caaug errors."""


class ZeroRange(CaAugError, ValueError):
    pass


class EmptyCloud(CaAugError, ValueError):
    pass


class EmptyObject(CaAugError, ValueError):
    pass


class SpanTooWide(CaAugError, ValueError):
    """Object occupies more than half of the azimuth columns."""


class SpecMismatch(CaAugError, ValueError):
    pass


class FormatVersionMismatch(CaAugError):
    """Database file has a bad magic, unknown version or unreadable header."""


class MalformedFile(CaAugError):
    pass


class SingularCalib(CaAugError, ValueError):
    pass


class UnknownStrategy(CaAugError, ValueError):
    pass


class ConfigError(CaAugError, ValueError):
    pass
