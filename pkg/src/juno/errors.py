class JunoError(Exception):
    """Base class for data errors raised by the engine."""


class ParseError(JunoError):
    pass


class ValidationError(JunoError):
    pass


class DimensionError(JunoError):
    pass


class FormatError(JunoError):
    """Corrupt or incompatible binary artifact (JEMB / JPRJ / JIDX)."""


class TrainingError(JunoError):
    pass
