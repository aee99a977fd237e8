"""Exception types shared across the package."""


class SweepAdaptError(Exception):
    """Base class for all package errors."""


class InvalidArgument(SweepAdaptError, ValueError):
    pass


class InvalidState(SweepAdaptError, RuntimeError):
    pass


class DegenerateRotation(SweepAdaptError, ValueError):
    """Rotation too close to gimbal lock to decode into Euler angles."""


class GenerationError(SweepAdaptError, RuntimeError):
    """Raised when a simulated trajectory cannot be produced."""
