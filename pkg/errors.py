# errors.py
"""Exception hierarchy shared by the regression engine, the feature pipeline and the CLI."""


class SvdklError(Exception):
    exit_code = 2


class UsageError(SvdklError):
    """Bad command line."""
    exit_code = 1


class InputShapeError(SvdklError, ValueError):
    pass


class InputError(SvdklError, ValueError):
    pass


class ConfigurationError(SvdklError):
    pass


class DataError(SvdklError):
    """A file could not be parsed or is inconsistent."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(f"{where}{message}")


class NumericalFailureError(SvdklError, ArithmeticError):
    exit_code = 3
