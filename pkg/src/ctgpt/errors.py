"""Exception hierarchy shared across the pipeline.

Each class maps to a distinct CLI exit code (see ``ctgpt.cli``).
"""


class CtgptError(Exception):
    exit_code = 1


class ArgumentError(CtgptError, ValueError):
    exit_code = 2


class ConfigError(CtgptError):
    exit_code = 3


class DataError(CtgptError):
    exit_code = 4


class FormatError(DataError):
    pass


class GenerationError(DataError):
    pass


class ContractError(CtgptError):
    exit_code = 5


class StateError(CtgptError, RuntimeError):
    exit_code = 6


class PathError(CtgptError, FileNotFoundError):
    exit_code = 7
