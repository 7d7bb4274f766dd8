"""Alternating blur-kernel / latent-image estimation on a coarse-to-fine pyramid.

Each inner iteration rebuilds the salient-edge mask, solves the kernel in
the Fourier domain against mask-truncated latent gradients, then updates
the latent image through the approximated normal equations whose prior
targets (sparse-code reconstructions and cross-scale predictions) are
computed from the previous iterate. The pyramid driver re-estimates the
kernel at every level and propagates only the latent image upward.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .crossscale import nl_weights_from_sqdists, nn_search_batch, target_patch_index
from .edgesel import init_threshold, salient_edge_mask, truncate_gradients
from .errors import (
    ConvergenceWarning,
    DegenerateDataError,
    DegenerateGradientError,
    EdgeblurError,
    EstimationError,
)
from .imgcore import (
    as_image,
    averaging_kernel,
    build_pyramid,
    derivative_otfs,
    downscale,
    edge_taper,
    gradients,
    kernel_otf,
    resize,
    to_gray,
)
from .patchops import accumulate_patches, extract_patches, mask_centers, valid_centers
from .solvers import bicg
from .sparsedict import ksvd_train, omp_encode_batch

KERNEL_PRUNE_FRACTION = 0.05  # taps below this fraction of the peak are noise


@dataclass
class EstimationConfig:
    """All tunables of the estimation stage; defaults follow the method's
    published operating point (patch 5x5, t=100, T=4, 14 inner iterations,
    lambda_c = lambda_s = 0.04/n, lambda_g = 0.003, lambda_h = 0.0003 N)."""

    a: float = 4.0 / 3.0
    patch_side: int = 5
    dict_atoms: int = 100
    sparsity: int = 4
    neighbors: int = 1
    inner_iters: int = 14
    lambda_c: float | None = None     # defaults to 0.04 / patch_dim
    lambda_s: float | None = None     # defaults to 0.04 / patch_dim
    lambda_g: float = 0.003
    lambda_h_scale: float = 0.0003    # lambda_h = scale * pixel count
    kernel_size: int = 51
    r_thresh: float = 2.0
    keep_fraction: float = 0.02
    presmooth_sigma: float = 1.0
    dog_sigma: float = 1.0
    eps: float = 1e-6                 # mean squared per-pixel change
    ksvd_iters: int = 10
    sample_cap: int = 20000
    h_weight: float | None = None     # defaults to 0.1 * patch_dim
    nn_mode: str = "exact"
    bicg_tol: float = 2e-5
    bicg_maxiter: int = 120
    min_level_side: int = 8
    mask_floor_per_tap: float = 4.0  # coarse-level mask floor, pixels per kernel tap
    seed: int = 0

    def __post_init__(self):
        if self.kernel_size < 3 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and >= 3, got {self.kernel_size}")
        if self.patch_side < 3 or self.patch_side % 2 == 0:
            raise ValueError(f"patch_side must be odd and >= 3, got {self.patch_side}")
        if self.a <= 1.0:
            raise ValueError(f"scale gap a must exceed 1, got {self.a}")
        if self.inner_iters < 0:
            raise ValueError("inner_iters must be non-negative")
        if self.lambda_c is None:
            self.lambda_c = 0.04 / self.patch_dim
        if self.lambda_s is None:
            self.lambda_s = 0.04 / self.patch_dim
        if self.h_weight is None:
            self.h_weight = 0.1 * self.patch_dim
        for name in ("lambda_c", "lambda_s", "lambda_g", "lambda_h_scale"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def patch_dim(self) -> int:
        return self.patch_side * self.patch_side

    def lambda_h(self, n_pixels: int) -> float:
        return self.lambda_h_scale * n_pixels


@dataclass
class LevelTrace:
    """One inner iteration's progress record."""
    level: int
    depth: int
    iteration: int
    tau: float
    mask_size: int
    bicg_iterations: int
    bicg_residual: float
    delta: float
    kernel_size: int
    shape: tuple = field(default=())


# ---------------------------------------------------------------------------
# kernel update (Fourier-domain quadratic minimizer + physical projection)
# ---------------------------------------------------------------------------

def kernel_quotient(grad_y, grad_x_masked, lambda_h: float) -> np.ndarray:
    """Image-size minimizer of the masked-gradient data term, pre-projection.

    Divides the cross-correlation spectrum by the masked-gradient power
    spectrum plus lambda_h; exact under the periodic boundary.
    """
    gx_y, gy_y = (np.asarray(g, dtype=np.float64) for g in grad_y)
    gx_m, gy_m = (np.asarray(g, dtype=np.float64) for g in grad_x_masked)
    if gx_y.shape != gx_m.shape or gy_y.shape != gy_m.shape:
        raise ValueError("observed and masked gradients differ in shape")
    if not (np.any(gx_m) or np.any(gy_m)):
        raise DegenerateGradientError("masked gradients are identically zero")
    fxm = np.fft.fft2(gx_m)
    fym = np.fft.fft2(gy_m)
    numer = np.conj(fxm) * np.fft.fft2(gx_y) + np.conj(fym) * np.fft.fft2(gy_y)
    denom = np.abs(fxm) ** 2 + np.abs(fym) ** 2 + lambda_h
    return np.real(np.fft.ifft2(numer / denom))


def crop_kernel(full: np.ndarray, kernel_size: int) -> np.ndarray:
    """Central kernel_size window around the zero-shift tap of a full solution."""
    if kernel_size % 2 == 0:
        raise ValueError(f"kernel_size must be odd, got {kernel_size}")
    c = kernel_size // 2
    return np.roll(full, (c, c), axis=(0, 1))[:kernel_size, :kernel_size].copy()


def project_kernel(kernel: np.ndarray,
                   prune_fraction: float = KERNEL_PRUNE_FRACTION) -> np.ndarray:
    """Clamp negatives, drop taps below the noise floor, normalize to sum 1."""
    k = np.maximum(np.asarray(kernel, dtype=np.float64), 0.0)
    peak = k.max()
    if peak <= 0.0:
        raise DegenerateGradientError("kernel projection received no positive taps")
    k[k < prune_fraction * peak] = 0.0
    return k / k.sum()


def recenter_kernel(kernel: np.ndarray) -> np.ndarray:
    """Shift the kernel by integer offsets so its centroid sits at the center tap.

    Counters the translation ambiguity of the Fourier solution across
    pyramid levels; mass shifted past the support is dropped and the kernel
    renormalized.
    """
    k = np.asarray(kernel, dtype=np.float64)
    total = k.sum()
    if total <= 0:
        return k
    rows, cols = np.indices(k.shape)
    cr = (rows * k).sum() / total
    cc = (cols * k).sum() / total
    dr = int(np.floor(k.shape[0] // 2 - cr + 0.5))
    dc = int(np.floor(k.shape[1] // 2 - cc + 0.5))
    if dr == 0 and dc == 0:
        return k
    out = np.zeros_like(k)
    src_r = slice(max(0, -dr), min(k.shape[0], k.shape[0] - dr))
    src_c = slice(max(0, -dc), min(k.shape[1], k.shape[1] - dc))
    dst_r = slice(max(0, dr), max(0, dr) + (src_r.stop - src_r.start))
    dst_c = slice(max(0, dc), max(0, dc) + (src_c.stop - src_c.start))
    out[dst_r, dst_c] = k[src_r, src_c]
    s = out.sum()
    if s <= 0:
        return k
    return out / s


def update_kernel(grad_y, grad_x_masked, lambda_h: float, kernel_size: int,
                  recenter: bool = False) -> np.ndarray:
    """One kernel step: Fourier quotient, central crop, physical projection."""
    full = kernel_quotient(grad_y, grad_x_masked, lambda_h)
    kernel = project_kernel(crop_kernel(full, kernel_size))
    if recenter:
        kernel = recenter_kernel(kernel)
    return kernel


# ---------------------------------------------------------------------------
# latent update (approximated normal equations solved with BICG)
# ---------------------------------------------------------------------------

def prior_targets(x_prev, dictionary, centers, cfg: EstimationConfig):
    """Accumulated prior images of the normal equations' right-hand side.

    Returns (sparse_target, nl_target, coverage): the scatter-added
    sparse-code reconstructions, cross-scale predictions, and per-pixel
    patch coverage for the mask centers. Codes and neighbor sets come from
    x_prev, the previous iterate.
    """
    side = cfg.patch_side
    patches = extract_patches(x_prev, side, centers)
    codes = omp_encode_batch(dictionary, patches, cfg.sparsity)
    sparse_target, coverage = accumulate_patches(
        np.asarray(dictionary) @ codes, side, centers, x_prev.shape)

    z = downscale(x_prev, cfg.a, min_side=side)
    index = target_patch_index(z, side)
    nb_centers, nb_sq = nn_search_batch(
        patches, z, side, cfg.neighbors, cfg.nn_mode, index=index)
    w = nl_weights_from_sqdists(nb_sq, cfg.h_weight)
    nq, p = nb_sq.shape
    nb_patches = extract_patches(z, side, nb_centers.reshape(-1, 2))
    nb_patches = nb_patches.reshape(-1, nq, p)
    predictions = np.einsum("nqp,qp->nq", nb_patches, w)
    nl_target, _ = accumulate_patches(predictions, side, centers, x_prev.shape)
    return sparse_target, nl_target, coverage


def update_latent(y, kernel, x_prev, dictionary, mask, cfg: EstimationConfig,
                  return_info: bool = False):
    """Solve the regularized normal equations for the next latent iterate.

    The Fourier blocks (data term and gradient smoothness) are applied as
    multipliers; the edge-patch prior contributes a diagonal coverage term
    and fixed right-hand-side targets. BICG starts from x_prev, which pins
    the gradient operator's constant mode. Output is clamped to [0, 1].
    """
    y = np.asarray(y, dtype=np.float64)
    x_prev = np.asarray(x_prev, dtype=np.float64)
    if y.shape != x_prev.shape:
        raise ValueError(f"y {y.shape} and x_prev {x_prev.shape} differ in shape")
    shape = y.shape
    n_pixels = y.size

    otf = kernel_otf(kernel, shape)
    dx, dy = derivative_otfs(shape)
    grad_power = np.abs(dx) ** 2 + np.abs(dy) ** 2
    fourier_mult = (np.abs(otf) ** 2 + cfg.lambda_g) * grad_power

    centers = mask_centers(mask, cfg.patch_side)
    if centers.shape[0] == 0:
        warnings.warn("empty edge mask: patch priors dropped for this solve",
                      ConvergenceWarning, stacklevel=2)
        diag = np.zeros(n_pixels)
        rhs_prior = 0.0
    else:
        ratio = n_pixels / centers.shape[0]
        sparse_target, nl_target, coverage = prior_targets(
            x_prev, dictionary, centers, cfg)
        diag = ((cfg.lambda_c + cfg.lambda_s) * ratio * coverage).ravel()
        rhs_prior = ratio * (cfg.lambda_c * sparse_target + cfg.lambda_s * nl_target)

    rhs = np.real(np.fft.ifft2(np.conj(otf) * grad_power * np.fft.fft2(y))) + rhs_prior

    def matvec(v):
        spectral = np.real(np.fft.ifft2(
            fourier_mult * np.fft.fft2(v.reshape(shape)))).ravel()
        return spectral + diag * v

    # Fourier-diagonal preconditioner: exact for the circulant blocks, the
    # patch coverage enters only through its mean.
    shift = diag.mean()
    precond_mult = 1.0 / (fourier_mult + (shift if shift > 0 else 1.0))

    def minv(v):
        return np.real(np.fft.ifft2(
            precond_mult * np.fft.fft2(v.reshape(shape)))).ravel()

    result = bicg(matvec, rhs.ravel(), x0=x_prev.ravel(), minv=minv,
                  rtol=cfg.bicg_tol, maxiter=cfg.bicg_maxiter)
    if not result.converged:
        warnings.warn(
            f"BICG stopped at relative residual {result.residual:.2e} "
            f"after {result.iterations} iterations", ConvergenceWarning,
            stacklevel=2)
    x_new = np.clip(result.x.reshape(shape), 0.0, 1.0)
    if return_info:
        return x_new, result
    return x_new


# ---------------------------------------------------------------------------
# dictionary refresh
# ---------------------------------------------------------------------------

def train_dictionary(latent, cfg: EstimationConfig, seed: int) -> np.ndarray:
    """Train the sparse dictionary from edge patches of the down-scaled latent.

    Falls back to all eligible patches when the edge pool is smaller than
    the atom count, and to the latent itself when the down-scaled image is
    too small to supply patch-dimension many samples.
    """
    side = cfg.patch_side
    try:
        source = downscale(latent, cfg.a, min_side=side)
    except EdgeblurError:
        source = np.asarray(latent, dtype=np.float64)
    mask = salient_edge_mask(source, cfg.keep_fraction, cfg.presmooth_sigma,
                             cfg.dog_sigma, side)
    centers = mask_centers(mask, side)
    if centers.shape[0] < cfg.dict_atoms:
        centers = valid_centers(source.shape, side)
    if centers.shape[0] < cfg.patch_dim:
        source = np.asarray(latent, dtype=np.float64)
        centers = valid_centers(source.shape, side)
    samples = extract_patches(source, side, centers)
    if samples.shape[1] > cfg.sample_cap:
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(samples.shape[1], size=cfg.sample_cap,
                                  replace=False))
        samples = samples[:, keep]
    atoms = min(cfg.dict_atoms, samples.shape[1])
    return ksvd_train(samples, atoms, cfg.sparsity, cfg.ksvd_iters, seed)


# ---------------------------------------------------------------------------
# pyramid driver
# ---------------------------------------------------------------------------

def ceil_to_odd(value: float) -> int:
    size = int(np.ceil(value - 1e-9))
    if size % 2 == 0:
        size += 1
    return max(size, 3)


def level_keep_fraction(cfg: EstimationConfig, shape, kernel_size: int) -> float:
    """Mask fraction for one level: the 2% rule with a coarse-level floor.

    On small pyramid levels 2% of the eligible pixels can undershoot the
    number of constraints needed to pin down the kernel taps, so the mask
    is floored at mask_floor_per_tap pixels per tap. Full-resolution levels
    are unaffected (the floor sits below the 2% count there).
    """
    radius = cfg.patch_side // 2
    eligible = max((shape[0] - 2 * radius) * (shape[1] - 2 * radius), 1)
    floor = min(int(cfg.mask_floor_per_tap * kernel_size * kernel_size), eligible)
    return max(cfg.keep_fraction, floor / eligible)


def estimate(y, cfg: EstimationConfig | None = None, progress=None):
    """Blind kernel estimation over the full pyramid.

    Returns (kernel, latent): the finest-level kernel estimate and the
    estimation-stage latent image (the user-facing restoration runs
    separately with the estimated kernel). The latent chain starts from the
    observed image at the coarsest level; the dictionary is trained from it
    and refreshed once per level from that level's final latent.
    """
    cfg = cfg or EstimationConfig()
    y_gray = to_gray(as_image(y))
    if np.ptp(y_gray) < 1e-12:
        raise DegenerateDataError("constant image: blur kernel is unidentifiable")
    pyramid = build_pyramid(y_gray, cfg.kernel_size, cfg.patch_side, cfg.a,
                            cfg.min_level_side)
    depth = pyramid.depth

    latent = pyramid.levels[0].image.copy()
    level, iteration = 1, 0
    try:
        dictionary = train_dictionary(latent, cfg, cfg.seed)
        kernel = None
        for idx, lvl in enumerate(pyramid.levels):
            level, iteration = idx + 1, 0
            y_level = lvl.image
            ksize = ceil_to_odd(cfg.kernel_size / cfg.a ** (depth - level))
            lam_h = cfg.lambda_h(y_level.size)
            y_tapered = edge_taper(y_level, averaging_kernel(ksize))
            grad_y = gradients(y_tapered)
            if level == 1:
                latent = y_tapered.copy()  # keep the chain boundary-consistent
            keep = level_keep_fraction(cfg, y_level.shape, ksize)
            state = init_threshold(*gradients(latent), ksize * ksize, cfg.r_thresh)

            while True:
                mask = salient_edge_mask(latent, keep,
                                         cfg.presmooth_sigma, cfg.dog_sigma,
                                         cfg.patch_side)
                masked = truncate_gradients(*gradients(latent), mask, state)
                kernel = update_kernel(grad_y, masked, lam_h, ksize, recenter=True)
                new_latent, info = update_latent(y_tapered, kernel, latent,
                                                 dictionary, mask, cfg,
                                                 return_info=True)
                delta = float(np.mean((new_latent - latent) ** 2))
                latent = new_latent
                iteration += 1
                if progress is not None:
                    progress(LevelTrace(
                        level=level, depth=depth, iteration=iteration,
                        tau=state.tau, mask_size=int(mask.sum()),
                        bicg_iterations=info.iterations,
                        bicg_residual=info.residual, delta=delta,
                        kernel_size=ksize, shape=tuple(y_level.shape)))
                state = state.anneal()
                if iteration >= max(cfg.inner_iters, 1) or delta <= cfg.eps:
                    break

            if level < depth:
                dictionary = train_dictionary(latent, cfg, cfg.seed + level)
                next_shape = pyramid.levels[idx + 1].image.shape
                latent = np.clip(resize(latent, next_shape, "bilinear"), 0.0, 1.0)
    except EstimationError:
        raise
    except EdgeblurError as exc:
        raise EstimationError(
            f"level {level}/{depth}, iteration {iteration}: {exc}") from exc
    return kernel, latent
