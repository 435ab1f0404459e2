"""Exception hierarchy. The CLI maps these onto exit codes."""


class AutopolyError(Exception):
    """Base class for all errors raised by this package."""


class InputError(AutopolyError, ValueError):
    """Malformed user input: edge lists, bundle files, split ratios."""

    def __init__(self, message, *, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)


class ShapeError(AutopolyError, ValueError):
    """Array dimensions disagree."""


class NumericError(AutopolyError, ArithmeticError):
    """Non-finite values in weights, features, or gradients."""


class GuardError(AutopolyError):
    """A resource guard refused the request (e.g. grid too large)."""


class ConfigError(AutopolyError, ValueError):
    """Invalid experiment configuration; ``field`` is a dotted path."""

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class CheckpointError(AutopolyError, ValueError):
    """Unreadable checkpoint or unsupported checkpoint version."""
