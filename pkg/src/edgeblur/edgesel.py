"""Salient-edge mask construction and gradient magnitude thresholding.

The mask keeps the top 2% of eligible pixels by oriented
derivative-of-Gaussian response; the gradient threshold keeps at least
r * sqrt(kernel area) pixels per quantized direction bin and is annealed by
1/1.1 each inner iteration so later iterations admit subtler structure.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .errors import DegenerateInputWarning
from .imgcore import _require_gray

TAU_DECAY = 1.1
_N_ORIENTATIONS = 8
_N_DIRECTION_BINS = 4  # 8 orientations with opposites merged


@dataclass(frozen=True)
class ThresholdState:
    tau: float
    r: float
    kernel_area: int

    def anneal(self) -> "ThresholdState":
        return replace(self, tau=self.tau / TAU_DECAY)


def oriented_responses(image, sigma: float = 1.0) -> np.ndarray:
    """Max absolute response over eight derivative-of-Gaussian orientations.

    First derivatives of a Gaussian are steerable, so the eight oriented
    responses are exact cos/sin combinations of the two axis responses.
    """
    img = _require_gray(image)
    ry = ndimage.gaussian_filter(img, sigma, order=(1, 0), mode="nearest")
    rx = ndimage.gaussian_filter(img, sigma, order=(0, 1), mode="nearest")
    best = np.zeros_like(img)
    for i in range(_N_ORIENTATIONS):
        theta = i * (2.0 * np.pi / _N_ORIENTATIONS)
        np.maximum(best, np.abs(np.cos(theta) * rx + np.sin(theta) * ry), out=best)
    return best


def salient_edge_mask(latent, keep_fraction: float = 0.02,
                      presmooth_sigma: float = 1.0, dog_sigma: float = 1.0,
                      patch_side: int = 5) -> np.ndarray:
    """Boolean mask of salient-edge pixels eligible as patch centers.

    The image is Gaussian low-pass filtered first (flat regions would
    otherwise promote noise into the mask), then the strongest
    `keep_fraction` of eligible pixels are kept. The border band where a
    patch footprint would exit the image is never eligible. Ties are broken
    by raster order.
    """
    img = _require_gray(latent)
    mask = np.zeros(img.shape, dtype=bool)
    if np.ptp(img) < 1e-12:
        warnings.warn("constant image: salient-edge mask is empty",
                      DegenerateInputWarning, stacklevel=2)
        return mask
    smooth = ndimage.gaussian_filter(img, presmooth_sigma, mode="nearest")
    response = oriented_responses(smooth, dog_sigma)

    radius = patch_side // 2
    eligible = np.zeros(img.shape, dtype=bool)
    if img.shape[0] > 2 * radius and img.shape[1] > 2 * radius:
        eligible[radius:img.shape[0] - radius, radius:img.shape[1] - radius] = True
    flat_idx = np.flatnonzero(eligible)
    count = int(np.floor(keep_fraction * flat_idx.size + 0.5))
    if count == 0:
        return mask
    scores = response.ravel()[flat_idx]
    order = np.lexsort((flat_idx, -scores))  # descending score, raster ties
    mask.ravel()[flat_idx[order[:count]]] = True
    return mask


def init_threshold(gx, gy, kernel_area: int, r: float = 2.0) -> ThresholdState:
    """Largest tau keeping >= r * sqrt(kernel_area) pixels in every direction bin.

    Gradient angles are quantized by 45 degrees with opposite directions
    merged (four bins). A bin that cannot retain the required count forces
    tau = 0 with a warning, so no direction is starved.
    """
    gx = np.asarray(gx, dtype=np.float64)
    gy = np.asarray(gy, dtype=np.float64)
    if gx.shape != gy.shape:
        raise ValueError(f"gradient shapes differ: {gx.shape} vs {gy.shape}")
    need = int(np.ceil(r * np.sqrt(kernel_area)))
    mag = np.hypot(gx, gy).ravel()
    keep = mag > 0.0
    angle = np.mod(np.arctan2(gy, gx).ravel()[keep], np.pi)
    bins = np.round(angle / (np.pi / _N_DIRECTION_BINS)).astype(int) % _N_DIRECTION_BINS
    mag = mag[keep]

    taus = []
    for b in range(_N_DIRECTION_BINS):
        values = mag[bins == b]
        if values.size < need:
            warnings.warn(
                f"direction bin {b} holds {values.size} < {need} gradients; "
                "falling back to tau = 0", DegenerateInputWarning, stacklevel=2)
            return ThresholdState(tau=0.0, r=r, kernel_area=kernel_area)
        taus.append(np.partition(values, values.size - need)[values.size - need])
    return ThresholdState(tau=float(min(taus)), r=r, kernel_area=kernel_area)


def truncate_gradients(gx, gy, mask, state: ThresholdState):
    """Zero gradients outside the mask or below the magnitude threshold."""
    gx = np.asarray(gx, dtype=np.float64)
    gy = np.asarray(gy, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if gx.shape != mask.shape or gy.shape != mask.shape:
        raise ValueError("gradient and mask shapes differ")
    keep = mask & (np.hypot(gx, gy) >= state.tau)
    return np.where(keep, gx, 0.0), np.where(keep, gy, 0.0)
