class QvolError(ValueError):
    """Base class for every error raised by the qvol services."""


class DomainError(QvolError):
    """Argument outside the domain of the function."""


class PoleError(QvolError):
    """Evaluation at (or numerically too close to) a pole or lattice point."""


class SingularityError(PoleError):
    """Coincident arguments of the Green's function."""


class ConfigurationError(QvolError):
    """Infeasible contours, offsets or run parameters."""


class MalformedTilingError(QvolError):
    """Point set or partition tuple that is not a valid cylindric configuration."""


class ResourceError(QvolError):
    """State space or enumeration too large to materialize."""


class InsufficientSamplesError(QvolError):
    """Too few samples for the requested estimator."""
