"""Exceptions raised by hjvariance."""


class HJVarianceError(Exception):
    """Base class for all library errors."""


class ConfigError(HJVarianceError, ValueError):
    """Invalid parameter or parameter combination."""


class DomainError(HJVarianceError):
    """Query outside the sampled box."""


class BoxTooSmallError(DomainError):
    """Sampled box does not cover the region a computation needs."""


class InsufficientMarginError(DomainError):
    """Shifted or extended window leaves the sampled box."""


class InstanceTooLargeError(HJVarianceError):
    """Exhaustive enumeration would exceed its limit."""


class SolverError(HJVarianceError):
    """Dynamic programming produced an unusable result."""


class DegenerateDataError(HJVarianceError):
    """Statistics cannot be formed from the data given."""


class SnapshotFormatError(HJVarianceError):
    """Snapshot file is malformed or of an unknown version."""
