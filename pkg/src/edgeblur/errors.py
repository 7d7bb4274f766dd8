"""Exception and warning types shared across the package."""


class EdgeblurError(Exception):
    """Base class for package errors."""


class DimensionError(EdgeblurError, ValueError):
    """Array shapes are incompatible with the requested operation."""


class ChannelError(EdgeblurError, ValueError):
    """Operation requires a different channel layout."""


class ScaleError(EdgeblurError, ValueError):
    """Requested resampling would produce an invalid size."""


class PatchIndexError(EdgeblurError, IndexError):
    """A patch footprint falls outside the image."""


class TrainingDataError(EdgeblurError, ValueError):
    """Not enough training samples for the requested dictionary."""


class DegenerateDataError(EdgeblurError, ValueError):
    """Input carries no usable signal (e.g. constant image, all-zero samples)."""


class DegenerateGradientError(EdgeblurError, ValueError):
    """Kernel update is undefined because the masked gradients vanish."""


class KernelFileError(EdgeblurError, ValueError):
    """Kernel file is missing, truncated, or not parseable."""


class EstimationError(EdgeblurError, RuntimeError):
    """Blind estimation failed; message carries level/iteration context."""


class ConvergenceWarning(UserWarning):
    """Iterative solver stopped before reaching its tolerance."""


class DegenerateInputWarning(UserWarning):
    """Input is degenerate; a trivial result was returned."""
