"""Exception types shared across the package."""


class WeatherMatrixError(Exception):
    """Base class for all errors raised by this package."""


class MalformedHeader(WeatherMatrixError):
    """Sensor CSV header is missing a declared column."""


class EmptyFile(WeatherMatrixError):
    """Sensor CSV has no header or no content."""


class NonMonotonicTimestamps(WeatherMatrixError):
    """Duplicate or decreasing timestamp in a sensor file.

    Carries the 1-based data-row number of the offending row.
    """

    def __init__(self, row: int, message: str = ""):
        self.row = row
        super().__init__(message or f"non-monotonic timestamp at data row {row}")


class IncompatibleUnits(WeatherMatrixError):
    """Two series of the same quantity disagree on unit."""


class DomainError(WeatherMatrixError):
    """Input outside the documented validity range of a formula."""


class MisalignedInput(WeatherMatrixError):
    """Series expected on a common grid have different grids."""


class ConfigError(WeatherMatrixError):
    """Missing, inverted, or out-of-range configuration value."""


class NoData(WeatherMatrixError):
    """No usable reading in the requested period."""


class NoOverlap(WeatherMatrixError):
    """Two series have no common timestamps."""


class InsufficientOverlap(WeatherMatrixError):
    """Not enough overlapping points for a statistic."""


class MissingMeasurement(WeatherMatrixError):
    """A required optional measurement is absent."""


class OverlappingIntervals(WeatherMatrixError):
    """Depth intervals of one drilling overlap."""


class SchemaMismatch(WeatherMatrixError):
    """Campaign carries a parameter absent from the matrix schema."""


class UnvalidatedCampaign(WeatherMatrixError):
    """Matrix build attempted from a campaign with validation findings."""


class SchemaViolation(WeatherMatrixError):
    """Imported matrix violates its own schema invariants."""


class MalformedPayload(WeatherMatrixError):
    """Matrix import stream is truncated or not parseable."""


class SiteMismatch(WeatherMatrixError):
    """Diff attempted between matrices of different sites."""
