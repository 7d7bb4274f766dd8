import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from edgeblur import imgcore


def center_crop(raw, size=128):
    """Native-resolution crop (no resampling, which would ring sharp edges)."""
    img = raw.astype(np.float64) / 255.0
    if img.ndim == 3:
        img = imgcore.to_gray(img)
    h, w = img.shape
    r0, c0 = (h - size) // 2, (w - size) // 2
    return np.ascontiguousarray(img[r0:r0 + size, c0:c0 + size])


def natural_image(name, size=128):
    from skimage import data
    return center_crop(getattr(data, name)(), size)


def natural_image_resized(name, size=255):
    """Full-frame natural image resampled to size x size."""
    from skimage import data
    img = getattr(data, name)().astype(np.float64) / 255.0
    if img.ndim == 3:
        img = imgcore.to_gray(img)
    h, w = img.shape
    s = min(h, w)
    img = img[(h - s) // 2:(h - s) // 2 + s, (w - s) // 2:(w - s) // 2 + s]
    return np.clip(imgcore.resize(img, (size, size)), 0.0, 1.0)


def cartoon_image(size=255, seed=4):
    """Piecewise-constant scene: gradient energy sits on salient edges."""
    rng = np.random.default_rng(seed)
    img = np.full((size, size), 0.25)
    lo, hi = max(2, size // 12), max(3, size // 3)
    for _ in range(12):
        r0, c0 = rng.integers(0, max(1, size - lo), 2)
        h, w = rng.integers(lo, hi, 2)
        img[r0:min(r0 + h, size), c0:min(c0 + w, size)] = rng.uniform(0.05, 0.95)
    yy, xx = np.indices((size, size))
    for _ in range(6):
        cy, cx = rng.integers(size // 8, size - size // 8, 2)
        rad = rng.integers(max(2, size // 20), max(3, size // 6))
        img[(yy - cy) ** 2 + (xx - cx) ** 2 < rad ** 2] = rng.uniform(0.05, 0.95)
    return img


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
