"""Numeric substrate: images, convolution, derivatives, resampling, pyramids.

Images are float64 arrays in [0, 1], shaped (H, W) for gray or (H, W, 3)
for color. Kernels are small 2-D float64 arrays; estimated blur kernels are
square with odd side so they have a center tap. The periodic convolution
path is exactly diagonalized by the FFT, which the solvers rely on.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from .errors import (
    ChannelError,
    DegenerateInputWarning,
    DimensionError,
    ScaleError,
)

REC601_WEIGHTS = (0.299, 0.587, 0.114)


# ---------------------------------------------------------------------------
# containers and conversions
# ---------------------------------------------------------------------------

def as_image(data) -> np.ndarray:
    """Coerce to a float64 image array and check shape/finiteness."""
    img = np.asarray(data, dtype=np.float64)
    if img.ndim not in (2, 3):
        raise DimensionError(f"image must be 2-D or 3-D, got shape {img.shape}")
    if img.ndim == 3 and img.shape[2] not in (1, 3):
        raise ChannelError(f"expected 1 or 3 channels, got {img.shape[2]}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains NaN or Inf")
    return img


def to_gray(image) -> np.ndarray:
    """Rec. 601 luma conversion; single-channel inputs pass through."""
    img = as_image(image)
    if img.ndim == 2:
        return img
    if img.shape[2] == 1:
        return img[:, :, 0]
    return img @ np.asarray(REC601_WEIGHTS)


def _require_gray(image) -> np.ndarray:
    img = as_image(image)
    if img.ndim != 2:
        raise ChannelError("operation is defined for single-channel images only")
    return img


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def kernel_otf(kernel, shape) -> np.ndarray:
    """Transfer function of a centered kernel with its center tap at (0, 0).

    The center tap of a (kh, kw) kernel is (kh // 2, kw // 2); tap (u, v)
    contributes at circular offset (u - kh // 2, v - kw // 2).
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    kh, kw = kernel.shape
    h, w = shape
    if kh > h or kw > w:
        raise DimensionError(f"kernel {kernel.shape} larger than image {shape}")
    pad = np.zeros((h, w))
    pad[:kh, :kw] = kernel
    pad = np.roll(pad, (-(kh // 2), -(kw // 2)), axis=(0, 1))
    return np.fft.fft2(pad)


def conv2(image, kernel, boundary: str = "periodic") -> np.ndarray:
    """2-D convolution with a centered kernel.

    boundary='periodic' wraps around (equals FFT-domain multiplication);
    boundary='replicate' extends edge values. Output has the input's size.
    """
    img = as_image(image)
    kernel = np.asarray(kernel, dtype=np.float64)
    if img.ndim == 3:
        return np.dstack([conv2(img[:, :, c], kernel, boundary)
                          for c in range(img.shape[2])])
    h, w = img.shape
    kh, kw = kernel.shape
    if kh > h or kw > w:
        raise DimensionError(f"kernel {kernel.shape} larger than image {img.shape}")
    if kernel.shape == (1, 1):
        return img * kernel[0, 0]
    if boundary == "periodic":
        otf = kernel_otf(kernel, img.shape)
        return np.real(np.fft.ifft2(otf * np.fft.fft2(img)))
    if boundary == "replicate":
        top, bottom = kh // 2, kh - 1 - kh // 2
        left, right = kw // 2, kw - 1 - kw // 2
        padded = np.pad(img, ((top, bottom), (left, right)), mode="edge")
        out = conv2(padded, kernel, "periodic")
        return out[top:top + h, left:left + w]
    raise ValueError(f"unknown boundary mode {boundary!r}")


def correlate2(image, kernel, boundary: str = "periodic") -> np.ndarray:
    """Adjoint of `conv2` in the image argument (periodic boundary)."""
    img = _require_gray(image)
    if boundary != "periodic":
        raise ValueError("correlate2 is defined for the periodic boundary")
    otf = kernel_otf(kernel, img.shape)
    return np.real(np.fft.ifft2(np.conj(otf) * np.fft.fft2(img)))


# ---------------------------------------------------------------------------
# derivatives
# ---------------------------------------------------------------------------

def gradients(image):
    """Forward-difference x/y derivatives with periodic wrap."""
    img = _require_gray(image)
    gx = np.roll(img, -1, axis=1) - img
    gy = np.roll(img, -1, axis=0) - img
    return gx, gy


def gradients_adjoint(gx, gy) -> np.ndarray:
    """Adjoint of `gradients` under the periodic inner product."""
    gx = np.asarray(gx, dtype=np.float64)
    gy = np.asarray(gy, dtype=np.float64)
    return (np.roll(gx, 1, axis=1) - gx) + (np.roll(gy, 1, axis=0) - gy)


def derivative_otfs(shape):
    """Fourier multipliers matching `gradients` on the periodic grid."""
    h, w = shape
    fx = np.exp(2j * np.pi * np.fft.fftfreq(w)) - 1.0
    fy = np.exp(2j * np.pi * np.fft.fftfreq(h)) - 1.0
    return np.broadcast_to(fx, (h, w)), np.broadcast_to(fy[:, None], (h, w))


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def _lanczos3(x):
    x = np.abs(x)
    return np.where(x < 3.0, np.sinc(x) * np.sinc(x / 3.0), 0.0)


def _triangle(x):
    return np.maximum(0.0, 1.0 - np.abs(x))


_FILTERS = {"lanczos3": (_lanczos3, 3.0), "bilinear": (_triangle, 1.0)}


def _resample_matrix(n_in: int, n_out: int, method: str) -> np.ndarray:
    """Row-normalized 1-D resampling matrix (replicate boundary)."""
    taps_fn, radius = _FILTERS[method]
    scale = n_in / n_out
    stretch = max(scale, 1.0)  # stretch the filter when shrinking
    support = radius * stretch
    centers = (np.arange(n_out) + 0.5) * scale - 0.5
    lo = np.floor(centers - support).astype(int)
    width = int(np.ceil(2 * support)) + 2
    taps = lo[:, None] + np.arange(width)[None, :]
    weights = taps_fn((taps - centers[:, None]) / stretch)
    weights /= weights.sum(axis=1, keepdims=True)
    src = np.clip(taps, 0, n_in - 1)
    mat = np.zeros((n_out, n_in))
    np.add.at(mat, (np.repeat(np.arange(n_out), width), src.ravel()), weights.ravel())
    return mat


def resize(image, out_shape, method: str = "lanczos3") -> np.ndarray:
    """Separable resampling to (out_h, out_w); 'lanczos3' or 'bilinear'."""
    img = as_image(image)
    if img.ndim == 3:
        return np.dstack([resize(img[:, :, c], out_shape, method)
                          for c in range(img.shape[2])])
    oh, ow = out_shape
    if oh < 1 or ow < 1:
        raise ScaleError(f"invalid output shape {out_shape}")
    mr = _resample_matrix(img.shape[0], oh, method)
    mc = _resample_matrix(img.shape[1], ow, method)
    return mr @ img @ mc.T


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def downscale(image, a: float, min_side: int = 8) -> np.ndarray:
    """Band-limited (Lanczos-3 windowed sinc) down-scaling by factor a > 1."""
    if a <= 1.0:
        raise ScaleError(f"down-scale factor must exceed 1, got {a}")
    img = as_image(image)
    h, w = img.shape[:2]
    oh, ow = _round_half_up(h / a), _round_half_up(w / a)
    if min(oh, ow) < min_side:
        raise ScaleError(
            f"down-scaled size {(oh, ow)} falls below the {min_side} px floor")
    return resize(img, (oh, ow), "lanczos3")


# ---------------------------------------------------------------------------
# pyramid
# ---------------------------------------------------------------------------

@dataclass
class PyramidLevel:
    image: np.ndarray
    scale: float  # size relative to the original (level L has scale 1)


@dataclass
class Pyramid:
    levels: list  # PyramidLevel, coarsest first

    @property
    def depth(self) -> int:
        return len(self.levels)


def pyramid_depth(kernel_size: int, patch_side: int, a: float) -> int:
    """Smallest L with kernel_size / a**(L-1) < patch_side."""
    depth = 1
    while kernel_size / a ** (depth - 1) >= patch_side:
        depth += 1
    return depth


def build_pyramid(image, kernel_size: int, patch_side: int, a: float = 4.0 / 3.0,
                  min_side: int = 8) -> Pyramid:
    """Coarse-to-fine pyramid; at the coarsest level the blur is patch-sized.

    Each level is resampled from the original (never from a coarser level)
    so resampling error does not accumulate. The depth is reduced if the
    coarsest level would drop below `min_side` pixels per side.
    """
    img = as_image(image)
    if kernel_size % 2 == 0:
        raise ValueError(f"kernel_size must be odd, got {kernel_size}")
    if patch_side < 3:
        raise ValueError(f"patch_side must be at least 3, got {patch_side}")
    h, w = img.shape[:2]
    depth = pyramid_depth(kernel_size, patch_side, a)
    while depth > 1 and _round_half_up(min(h, w) / a ** (depth - 1)) < min_side:
        depth -= 1
    levels = []
    for lev in range(1, depth + 1):
        factor = a ** (depth - lev)
        if lev == depth:
            levels.append(PyramidLevel(img.copy(), 1.0))
        else:
            shape = (_round_half_up(h / factor), _round_half_up(w / factor))
            levels.append(PyramidLevel(resize(img, shape, "lanczos3"), 1.0 / factor))
    return Pyramid(levels)


# ---------------------------------------------------------------------------
# boundary tapering
# ---------------------------------------------------------------------------

def _taper_window(profile: np.ndarray, length: int) -> np.ndarray:
    """1-D weight: 1 in the interior, dipping to 0 at the wrap seam."""
    auto = np.correlate(profile, profile, mode="full")  # length 2k-1
    peak = auto.max()
    if peak <= 0:
        return np.ones(length)
    auto = auto / peak
    k = profile.size
    window = np.ones(length)
    for offset in range(-(k - 1), k):
        window[offset % length] -= auto[offset + k - 1]
    return np.clip(window, 0.0, 1.0)


def edge_taper(image, kernel) -> np.ndarray:
    """Blend the border band toward its blurred version.

    The blend weight comes from the autocorrelation of the kernel's row and
    column sums, so pixels farther than the kernel size from every border
    are returned untouched. Suppresses wrap-around ringing in later
    FFT-domain deconvolution.
    """
    img = as_image(image)
    kernel = np.asarray(kernel, dtype=np.float64)
    if img.ndim == 3:
        return np.dstack([edge_taper(img[:, :, c], kernel)
                          for c in range(img.shape[2])])
    wr = _taper_window(kernel.sum(axis=1), img.shape[0])
    wc = _taper_window(kernel.sum(axis=0), img.shape[1])
    alpha = np.outer(wr, wc)
    blurred = conv2(img, kernel, "periodic")
    return alpha * img + (1.0 - alpha) * blurred


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

def delta_kernel(size: int) -> np.ndarray:
    if size % 2 == 0:
        raise ValueError(f"delta kernel size must be odd, got {size}")
    k = np.zeros((size, size))
    k[size // 2, size // 2] = 1.0
    return k


def averaging_kernel(size: int) -> np.ndarray:
    return np.full((size, size), 1.0 / (size * size))


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    if size % 2 == 0:
        raise ValueError(f"gaussian kernel size must be odd, got {size}")
    ax = np.arange(size) - size // 2
    g = np.exp(-0.5 * (ax / sigma) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def normalize_kernel(kernel) -> np.ndarray:
    kernel = np.asarray(kernel, dtype=np.float64)
    total = kernel.sum()
    if total <= 0:
        raise ValueError("kernel sum must be positive to normalize")
    return kernel / total


def random_motion_kernel(size: int, seed: int, steps: int | None = None,
                         jitter: float = 0.25) -> np.ndarray:
    """Random-walk motion trajectory splatted onto a size x size grid.

    The heading follows a wrapped random walk; the trajectory is recentered
    and rescaled to fit inside the support, splatted with bilinear weights,
    lightly smoothed, and normalized to sum 1. Deterministic per seed.
    """
    if size % 2 == 0:
        raise ValueError(f"motion kernel size must be odd, got {size}")
    rng = np.random.default_rng(seed)
    if steps is None:
        steps = 4 * size
    heading = rng.uniform(0.0, 2.0 * np.pi)
    step_len = 0.4 * rng.uniform(0.6, 1.4, size=steps)
    turns = rng.normal(0.0, jitter, size=steps)
    pts = np.zeros((steps + 1, 2))
    for i in range(steps):
        heading += turns[i]
        pts[i + 1] = pts[i] + step_len[i] * np.array([np.sin(heading), np.cos(heading)])
    pts -= pts.mean(axis=0)
    limit = size / 2.0 - 1.0
    extent = np.abs(pts).max()
    if extent > limit:
        pts *= limit / extent
    grid = np.zeros((size, size))
    center = size // 2
    rows, cols = pts[:, 0] + center, pts[:, 1] + center
    r0, c0 = np.floor(rows).astype(int), np.floor(cols).astype(int)
    fr, fc = rows - r0, cols - c0
    for dr, dc, wgt in ((0, 0, (1 - fr) * (1 - fc)), (0, 1, (1 - fr) * fc),
                        (1, 0, fr * (1 - fc)), (1, 1, fr * fc)):
        np.add.at(grid, (np.clip(r0 + dr, 0, size - 1),
                         np.clip(c0 + dc, 0, size - 1)), wgt)
    grid = ndimage.gaussian_filter(grid, 0.5, mode="constant")
    return normalize_kernel(grid)


# ---------------------------------------------------------------------------
# image file I/O (PNG via Pillow, PNM hand-rolled for 16-bit support)
# ---------------------------------------------------------------------------

_PNM_SUFFIXES = (".pgm", ".ppm", ".pnm")


def load_image(path) -> np.ndarray:
    """Load a PNG or PGM/PPM file as float64 in [0, 1]."""
    path = str(path)
    if path.lower().endswith(_PNM_SUFFIXES):
        return _read_pnm(path)
    with PILImage.open(path) as pil:
        if pil.mode == "P":
            pil = pil.convert("RGB")
        if pil.mode == "RGBA":
            pil = pil.convert("RGB")
        if pil.mode == "LA":
            pil = pil.convert("L")
        arr = np.asarray(pil)
    if arr.dtype == np.uint8:
        return as_image(arr / 255.0)
    if arr.dtype == np.uint16:
        return as_image(arr / 65535.0)
    if arr.dtype == np.int32:  # Pillow mode "I" (16-bit grayscale PNG)
        return as_image(arr / 65535.0)
    return as_image(np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0))


def save_image(path, image, bit_depth: int = 8) -> None:
    """Write an image as PNG or PGM/PPM at 8 or 16 bits."""
    if bit_depth not in (8, 16):
        raise ValueError(f"bit depth must be 8 or 16, got {bit_depth}")
    path = str(path)
    img = np.clip(as_image(image), 0.0, 1.0)
    maxval = (1 << bit_depth) - 1
    quant = np.floor(img * maxval + 0.5)
    if path.lower().endswith(_PNM_SUFFIXES):
        _write_pnm(path, quant, maxval)
        return
    if bit_depth == 8:
        arr = quant.astype(np.uint8)
        mode = "L" if arr.ndim == 2 else "RGB"
        PILImage.fromarray(arr, mode=mode).save(path)
    else:
        if img.ndim != 2:
            raise ChannelError("16-bit PNG output is supported for grayscale only")
        PILImage.fromarray(quant.astype(np.uint16), mode="I;16").save(path)


def _read_pnm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()

    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"truncated PNM header in {path}")
        tokens.append(data[start:pos])
        if len(tokens) == 1 and tokens[0] not in (b"P2", b"P3", b"P5", b"P6"):
            raise ValueError(f"unsupported PNM magic {tokens[0]!r} in {path}")
    magic = tokens[0].decode()
    width, height, maxval = (int(t) for t in tokens[1:4])
    channels = 3 if magic in ("P3", "P6") else 1
    count = width * height * channels
    if magic in ("P5", "P6"):
        pos += 1  # single whitespace byte after maxval
        dtype = ">u2" if maxval > 255 else "u1"
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    else:
        arr = np.array(data[pos:].split()[:count], dtype=np.float64)
    if arr.size != count:
        raise ValueError(f"truncated PNM payload in {path}")
    arr = arr.reshape((height, width) if channels == 1 else (height, width, 3))
    return as_image(arr / float(maxval))


def _write_pnm(path: str, quant: np.ndarray, maxval: int) -> None:
    channels = 1 if quant.ndim == 2 else quant.shape[2]
    magic = "P5" if channels == 1 else "P6"
    header = f"{magic}\n{quant.shape[1]} {quant.shape[0]}\n{maxval}\n"
    dtype = ">u2" if maxval > 255 else "u1"
    with open(path, "wb") as fh:
        fh.write(header.encode())
        fh.write(quant.astype(dtype).tobytes())


def warn_degenerate(message: str) -> None:
    warnings.warn(message, DegenerateInputWarning, stacklevel=3)
