"""Patch extraction and accumulation operators.

Patches are indexed by their center pixel and must lie fully inside the
image; centers too close to the border are simply not eligible. A patch
matrix stores one vectorized patch per column, raster order within the
patch. `accumulate_patches` is the exact adjoint of `extract_patches` and
also returns the per-pixel coverage count needed by the normal equations.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, PatchIndexError
from .imgcore import _require_gray


def _check_patch_side(patch_side: int) -> int:
    if patch_side < 1 or patch_side % 2 == 0:
        raise ValueError(f"patch side must be odd and positive, got {patch_side}")
    return patch_side // 2


def valid_centers(shape, patch_side: int, stride: int = 1) -> np.ndarray:
    """All in-bounds patch centers of an (H, W) image, raster order."""
    radius = _check_patch_side(patch_side)
    h, w = shape
    rows = np.arange(radius, h - radius, stride)
    cols = np.arange(radius, w - radius, stride)
    if rows.size == 0 or cols.size == 0:
        return np.empty((0, 2), dtype=np.intp)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return np.stack([rr.ravel(), cc.ravel()], axis=1)


def mask_centers(mask, patch_side: int) -> np.ndarray:
    """Centers of true mask pixels whose footprint is in-bounds, raster order."""
    radius = _check_patch_side(patch_side)
    mask = np.asarray(mask, dtype=bool)
    rows, cols = np.nonzero(mask)
    ok = ((rows >= radius) & (rows < mask.shape[0] - radius)
          & (cols >= radius) & (cols < mask.shape[1] - radius))
    return np.stack([rows[ok], cols[ok]], axis=1)


def _footprint_indices(centers: np.ndarray, patch_side: int, shape):
    radius = patch_side // 2
    centers = np.asarray(centers, dtype=np.intp).reshape(-1, 2)
    if centers.size:
        if (centers[:, 0].min() < radius or centers[:, 1].min() < radius
                or centers[:, 0].max() >= shape[0] - radius
                or centers[:, 1].max() >= shape[1] - radius):
            raise PatchIndexError("patch footprint exits the image")
    offsets = np.arange(patch_side) - radius
    rows = centers[:, 0, None, None] + offsets[None, :, None]
    cols = centers[:, 1, None, None] + offsets[None, None, :]
    return np.broadcast_arrays(rows, cols)


def extract_patches(image, patch_side: int, centers) -> np.ndarray:
    """Gather patches into an (n, count) matrix, n = patch_side**2."""
    img = _require_gray(image)
    _check_patch_side(patch_side)
    rows, cols = _footprint_indices(centers, patch_side, img.shape)
    return img[rows, cols].reshape(rows.shape[0], -1).T


def accumulate_patches(patches, patch_side: int, centers, shape):
    """Scatter-add patch columns back; adjoint of `extract_patches`.

    Returns (sum_image, coverage) where coverage counts how many patches
    cover each pixel. Uses np.add.at, so the reduction order is fixed and
    the result deterministic.
    """
    patches = np.asarray(patches, dtype=np.float64)
    _check_patch_side(patch_side)
    centers = np.asarray(centers, dtype=np.intp).reshape(-1, 2)
    n = patch_side * patch_side
    if patches.ndim != 2 or patches.shape[0] != n:
        raise DimensionError(
            f"patch matrix must be ({n}, count), got {patches.shape}")
    if patches.shape[1] != centers.shape[0]:
        raise DimensionError(
            f"{patches.shape[1]} patches vs {centers.shape[0]} centers")
    rows, cols = _footprint_indices(centers, patch_side, shape)
    total = np.zeros(shape)
    coverage = np.zeros(shape)
    values = patches.T.reshape(rows.shape)
    np.add.at(total, (rows, cols), values)
    np.add.at(coverage, (rows, cols), 1.0)
    return total, coverage
