"""Exception types shared across the library.

Ray death is NOT an error (dead rays are a normal trace outcome); these
exceptions mark conditions that invalidate a whole computation or candidate.
"""


class StockLensError(Exception):
    """Base class for library errors."""


class CatalogParseError(StockLensError):
    """Catalog file is malformed. Carries the offending row number."""

    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class CatalogValidationError(StockLensError):
    """A catalog row violates an element invariant. Carries the row number."""

    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class AfocalSystemError(StockLensError):
    """Paraxial marginal ray never crosses the axis behind the last surface."""


class TooFewRaysError(StockLensError):
    """Not enough live rays reached the sensor to form a statistic."""


class FNumberUnreachableError(StockLensError):
    """Requested f-number needs a pupil larger than some clear aperture."""


class InfeasibleCandidateError(StockLensError):
    """Continuous optimization could not find any finite starting point."""


class WavelengthRangeError(StockLensError):
    """Wavelength outside the supported 380-1100 nm dispersion range."""
