"""Exception hierarchy shared by all modules.

Each class carries the process exit code the CLI maps it to.
"""


class KawaflowError(Exception):
    exit_code = 1


class ParameterError(KawaflowError, ValueError):
    exit_code = 2


class ModelError(KawaflowError, ValueError):
    exit_code = 2


class DomainError(KawaflowError, ValueError):
    exit_code = 2


class SamplingError(KawaflowError, RuntimeError):
    exit_code = 2


class CapacityError(KawaflowError, MemoryError):
    exit_code = 3


class CheckFailed(KawaflowError, AssertionError):
    exit_code = 4
