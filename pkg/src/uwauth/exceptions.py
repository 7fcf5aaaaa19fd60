"""Exception types raised across the package."""


class UwAuthError(Exception):
    """Base class for every error raised by :mod:`uwauth`."""


class InputShapeError(UwAuthError, ValueError):
    pass


class EmptyInputError(UwAuthError, ValueError):
    pass


class ConfigurationError(UwAuthError, ValueError):
    pass


class ParseError(ConfigurationError):
    pass


class DegenerateDataError(UwAuthError, ValueError):
    pass


class DomainError(UwAuthError, ValueError):
    pass


class MissingClassError(UwAuthError, ValueError):
    """Raised when a score set lacks one of the two hypotheses."""


class TrainingDivergedError(UwAuthError, ArithmeticError):
    """The training loss became non-finite.

    ``last_finite_epoch`` is the last epoch (1-based) whose losses were finite,
    or 0 when divergence happened during the first epoch.
    """

    def __init__(self, message, last_finite_epoch=0):
        super().__init__(message)
        self.last_finite_epoch = last_finite_epoch
