"""Exception types; each maps to a CLI exit code."""


class PhenoError(Exception):
    exit_code = 1


class ConfigError(PhenoError, ValueError):
    exit_code = 1


class DataError(PhenoError):
    exit_code = 2


class SchemaError(DataError):
    def __init__(self, path, column):
        super().__init__(f"{path}: missing required column {column!r}")
        self.path = path
        self.column = column


class NumericalError(PhenoError, ArithmeticError):
    exit_code = 3


class DivergedError(NumericalError):
    pass
