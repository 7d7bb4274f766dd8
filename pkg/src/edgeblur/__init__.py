"""Blind motion deblurring with edge-masked sparse-representation and
cross-scale self-similarity priors."""

from .blindestim import (
    EstimationConfig,
    estimate,
    update_kernel,
    update_latent,
)
from .errors import (
    ConvergenceWarning,
    DegenerateDataError,
    DegenerateGradientError,
    DegenerateInputWarning,
    EdgeblurError,
    EstimationError,
    KernelFileError,
)
from .evalprobe import aggregate, error_ratio, probe_regularizers
from .imgcore import (
    build_pyramid,
    conv2,
    downscale,
    edge_taper,
    gradients,
    load_image,
    save_image,
    to_gray,
)
from .restore import RestoreConfig, deconvolve

__version__ = "0.1.0"

__all__ = [
    "ConvergenceWarning",
    "DegenerateDataError",
    "DegenerateGradientError",
    "DegenerateInputWarning",
    "EdgeblurError",
    "EstimationConfig",
    "EstimationError",
    "KernelFileError",
    "RestoreConfig",
    "aggregate",
    "build_pyramid",
    "conv2",
    "deconvolve",
    "downscale",
    "edge_taper",
    "error_ratio",
    "estimate",
    "gradients",
    "load_image",
    "probe_regularizers",
    "save_image",
    "to_gray",
    "update_kernel",
    "update_latent",
    "__version__",
]
