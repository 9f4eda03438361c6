"""Exception hierarchy shared by all modules."""


class InfluenceError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(InfluenceError, ValueError):
    """Invalid argument, configuration or data shape."""


class FormatError(ValidationError):
    """A binary or text file does not follow its declared format."""


class DataLengthError(FormatError):
    """A file payload is shorter or longer than its header announces."""


class ParseError(FormatError):
    def __init__(self, message, row=None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class FitError(InfluenceError, ValueError):
    """An estimator cannot be fitted on the given data."""


class SingularityError(InfluenceError, ValueError):
    """A density is singular (zero radius, empty leave-one-out set)."""


class NumericError(InfluenceError, ArithmeticError):
    def __init__(self, message, layer=None, step=None):
        where = []
        if layer is not None:
            where.append(f"layer {layer}")
        if step is not None:
            where.append(f"step {step}")
        super().__init__(message + (f" ({', '.join(where)})" if where else ""))
        self.layer = layer
        self.step = step


class DegenerateInputError(InfluenceError, ValueError):
    """Statistics requested on inputs with no spread."""
