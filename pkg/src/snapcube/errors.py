"""Exception types shared across the toolkit."""


class SnapcubeError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(SnapcubeError, ValueError):
    """Array dimensions violate an operation's contract."""


class ConfigurationError(SnapcubeError, ValueError):
    """Invalid configuration value or unknown plug-in name."""


class ParseError(SnapcubeError, ValueError):
    """Malformed container file; message names the failing byte offset."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class EstimationError(SnapcubeError, RuntimeError):
    """Model fitting problem is ill-posed (e.g. disconnected comparisons)."""


class DivergenceError(SnapcubeError, RuntimeError):
    """Optimization diverged: non-finite loss or an MLE at infinity."""


class IterationLimitError(SnapcubeError, RuntimeError):
    """Iterative solver failed to converge within its iteration budget."""
