"""Exception hierarchy shared by every module.

Each class carries the process exit code the command-line front end maps it to.
"""


class VgenError(Exception):
    exit_code = 1


class ConfigError(VgenError):
    exit_code = 1


class DataError(VgenError):
    exit_code = 2


class IngestionError(DataError):
    pass


class DomainError(DataError, ValueError):
    pass


class CompatibilityError(DataError):
    pass


class DegenerateFitError(DataError):
    pass


class NumericError(VgenError, ArithmeticError):
    exit_code = 3


class DimensionError(NumericError, ValueError):
    pass
