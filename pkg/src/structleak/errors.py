"""Exception hierarchy shared by every module.

Each class carries the CLI exit code it maps to so ``cli.run`` can turn a
failure into a machine-readable record without a lookup table.
"""


class StructLeakError(Exception):
    exit_code = 3
    module = "core"


class ContractError(StructLeakError, ValueError):
    """A precondition of an operation was violated."""


class ParseError(StructLeakError, ValueError):
    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        loc = ""
        if path is not None:
            loc = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(loc + message)
        self.path = path
        self.line = line


class RangeError(StructLeakError, IndexError):
    pass


class ResourceError(StructLeakError, RuntimeError):
    """Work would exceed a configured budget."""


class NumericError(StructLeakError, ArithmeticError):
    exit_code = 4


class UsageError(StructLeakError):
    exit_code = 2

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key
