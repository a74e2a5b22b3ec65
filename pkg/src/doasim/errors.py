"""Exception types shared across the package."""


class DoaSimError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(DoaSimError, ValueError):
    pass


class DegenerateProfileError(DoaSimError, ValueError):
    """Patient demographics produce a non-physical PK parameter."""

    def __init__(self, field: str, value: float, message: str = ""):
        self.field = field
        self.value = value
        super().__init__(message or f"degenerate patient profile: {field} = {value!r} must be > 0")


class NumericBlowupError(DoaSimError, ArithmeticError):
    """A simulation or controller produced a non-finite value."""

    def __init__(self, message: str, *, t: float | None = None, step: int | None = None,
                 state=None, patient_id=None):
        self.t = t
        self.step = step
        self.state = state
        self.patient_id = patient_id
        super().__init__(message)


class ConfigError(DoaSimError):
    """Malformed or schema-violating configuration file."""

    def __init__(self, message: str, *, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path:
            where = f"{path}:"
            if line is not None:
                where += f"{line}:"
            where += " "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)
