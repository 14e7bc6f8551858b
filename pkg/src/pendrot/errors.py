"""Exception types shared across the package."""


class PendrotError(Exception):
    """Base class."""


class InvalidInput(PendrotError, ValueError):
    pass


class InternalError(PendrotError, RuntimeError):
    pass


class OptimizationFailure(PendrotError, RuntimeError):
    """Descent did not converge; the best iterate is attached as ``best``."""

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


class InvalidNeighborhood(PendrotError, ValueError):
    pass


class InfeasibleLevel(PendrotError, ValueError):
    pass


class DegenerateConfiguration(PendrotError, RuntimeError):
    pass


class ParseError(PendrotError, ValueError):
    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedVersion(PendrotError, ValueError):
    pass


class ConfigError(PendrotError, ValueError):
    pass
