"""Exception hierarchy shared by every subpackage."""


class IfennError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class InvalidArgumentError(IfennError, ValueError):
    exit_code = 2


class NotFoundError(IfennError, LookupError):
    exit_code = 2


class ConfigError(IfennError):
    exit_code = 2


class AssemblyError(IfennError):
    exit_code = 3


class SolverError(IfennError):
    exit_code = 3

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class TrainingDivergedError(IfennError):
    exit_code = 3

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class ProtocolError(IfennError):
    exit_code = 4
