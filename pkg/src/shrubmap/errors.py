"""Exception types shared across the toolkit."""


class ShrubMapError(Exception):
    """Base class for all toolkit errors."""


class InvalidGeometry(ShrubMapError):
    """A geometry is degenerate and could not be repaired."""


class EmptyMatchSet(ShrubMapError):
    """A soft-overlap metric was called with no matching counterparts."""


class NonPositiveArea(ShrubMapError):
    """An area value that must be positive was zero or negative."""


class DegenerateBBox(ShrubMapError):
    """A bounding box has zero or negative extent."""


class NoDemCoverage(ShrubMapError):
    """The elevation grid does not cover any of the requested tiles."""


class DetectorUnavailable(ShrubMapError):
    """The configured detector cannot be invoked at all."""


class TileDetectionError(ShrubMapError):
    """Detection failed for a single tile (non-fatal, tile is skipped)."""


class DegenerateVariance(ShrubMapError):
    """A statistic requiring nonzero variance was asked of constant data."""


class ParseError(ShrubMapError):
    """A file could not be parsed at all."""


class SchemaError(ShrubMapError):
    """A file parsed but violates the expected schema."""
