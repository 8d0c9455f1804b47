"""Exception hierarchy. Every error raised on purpose by the package derives from CCFError."""


class CCFError(Exception):
    pass


class ConfigError(CCFError, ValueError):
    pass


class MissingEntityError(CCFError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class ShapeError(CCFError, ValueError):
    pass


class WrongLossError(CCFError, ValueError):
    """Loss kind cannot be applied to this record (e.g. plain softmax on a no-response session)."""


class DegenerateSessionError(CCFError, ValueError):
    pass


class ParseError(CCFError, ValueError):
    def __init__(self, msg, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            msg = "line %d: %s" % (lineno, msg)
        super().__init__(msg)


class DataValidationError(ParseError):
    pass


class InsufficientNegativesError(CCFError, ValueError):
    pass


class CheckpointError(CCFError, ValueError):
    pass
