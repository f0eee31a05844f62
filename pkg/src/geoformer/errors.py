"""Exception taxonomy shared by all geoformer modules.

The CLI maps these onto its exit codes: ConfigError -> 2, DataError (and
subclasses) -> 3, NonFiniteError -> 4.
"""


class GeoformerError(Exception):
    """Base class for all library errors."""


class DimensionError(GeoformerError):
    """Operand shapes do not chain or broadcast."""


class ContractError(GeoformerError):
    """An operation was called outside its contract (e.g. non-scalar loss)."""


class NonFiniteError(GeoformerError):
    """A NaN or Inf appeared in a computation."""


class DomainError(GeoformerError):
    """A point or tangent vector violates its manifold domain."""


class SingularityError(GeoformerError):
    """A denominator collapsed (e.g. antipodal Mobius configuration)."""


class RankError(GeoformerError):
    """A matrix factorization input was numerically rank deficient."""


class BatchSizeError(GeoformerError):
    """A mini-batch is too small for a well-posed QR/SVD projection."""


class ConfigError(GeoformerError):
    """Invalid configuration value or unknown key."""


class DataError(GeoformerError):
    """Dataset files are missing, malformed, or inconsistent."""


class SplitError(DataError):
    """A labeled class is too small to stratify into train/val/test."""
