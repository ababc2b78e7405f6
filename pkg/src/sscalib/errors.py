"""Exception types shared across the package."""


class SSCalibError(Exception):
    """Base class for package errors."""


class ValidationError(SSCalibError, ValueError):
    """Input data or configuration violates its schema."""


class IntegrationBlowupError(SSCalibError, FloatingPointError):
    """The process model produced a non-finite density."""

    def __init__(self, species, bin_index, message=None):
        self.species = species
        self.bin_index = bin_index
        super().__init__(message or
                         f"non-finite density for species {species!r} at bin {bin_index}")


class ClippingLimitError(SSCalibError, FloatingPointError):
    """Too many negative-density updates were clipped within one year."""


class TrajectoryError(SSCalibError):
    """A process-model failure tagged with the simulated year index."""

    def __init__(self, year_index, cause):
        self.year_index = year_index
        self.cause = cause
        super().__init__(f"year {year_index}: {cause}")
