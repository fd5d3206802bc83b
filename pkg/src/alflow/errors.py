"""Exception types shared across the workflow."""


class AlflowError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(AlflowError):
    """Invalid, missing, or unparseable configuration."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        super().__init__(message)


class TransportError(AlflowError):
    """Base class for message-layer failures."""


class DeadWorker(TransportError):
    """A peer terminated before the operation could complete."""

    def __init__(self, worker):
        self.worker = worker
        super().__init__(f"worker {worker} has terminated")


class LengthMismatch(TransportError):
    """Scatter payload count does not match the destination count."""


class TransportStopped(TransportError):
    """The transport was shut down while an operation was blocked.

    Worker loops treat this as an out-of-band stop request; plugin code
    never sees it.
    """


class SizeMismatch(AlflowError):
    """A weight vector does not match the model's declared weight size."""


class ProtocolError(AlflowError):
    """A message or hook result violated the workflow's shape contract."""


class DegenerateWorkload(AlflowError):
    """Analytical speedup is undefined because the parallel runtime is zero."""


class ComparisonError(AlflowError):
    """Paired serial/parallel reports are not comparable."""
