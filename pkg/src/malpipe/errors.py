"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line can map failures
to its documented status codes without a lookup table.
"""


class MalpipeError(Exception):
    exit_code = 1


class ConfigError(MalpipeError, ValueError):
    exit_code = 2


class ShapeError(MalpipeError, ValueError):
    exit_code = 2


class DataError(MalpipeError, ValueError):
    exit_code = 3


class IngestionError(DataError):
    pass


class PreprocessError(DataError):
    pass


class InputError(DataError):
    pass


class SchemaError(DataError):
    pass


class NumericError(MalpipeError, ArithmeticError):
    exit_code = 4


class FitError(NumericError):
    pass


class TrainingError(NumericError):
    pass


class PersistenceError(MalpipeError, IOError):
    exit_code = 5


class FormatError(PersistenceError):
    pass


class VersionError(PersistenceError):
    pass


class CorruptionError(PersistenceError):
    pass
