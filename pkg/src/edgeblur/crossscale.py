"""Cross-scale similar-patch search and non-local prediction.

Queries are patches of the current latent estimate; the search target is
its down-scaled version, where blur is weaker and patches look sharper.
Exact search scans every target patch; the approximate mode scans a
stride-coarsened grid first and re-ranks exactly around the survivors.
Weights are a softmax of negative squared distances, so each prediction is
a convex combination of its neighbor patches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .imgcore import _require_gray
from .patchops import extract_patches, valid_centers


@dataclass
class NeighborSet:
    """p nearest target patches for one query, distances ascending."""
    centers: np.ndarray   # (p, 2) centers in the target image
    sqdists: np.ndarray   # (p,)
    weights: np.ndarray | None = None


def target_patch_index(target, patch_side: int, stride: int = 1):
    """Precomputed (patch matrix, centers) for repeated searches."""
    img = _require_gray(target)
    centers = valid_centers(img.shape, patch_side, stride)
    return extract_patches(img, patch_side, centers), centers


def _select_smallest(sqdists: np.ndarray, p: int) -> np.ndarray:
    """Indices of the p smallest entries; ties broken by original order."""
    if p >= sqdists.size:
        return np.argsort(sqdists, kind="stable")
    bound = np.partition(sqdists, p - 1)[p - 1]
    cand = np.flatnonzero(sqdists <= bound)
    cand = cand[np.argsort(sqdists[cand], kind="stable")]
    return cand[:p]


def _sqdist_matrix(queries: np.ndarray, targets: np.ndarray) -> np.ndarray:
    q_sq = np.einsum("ij,ij->j", queries, queries)
    t_sq = np.einsum("ij,ij->j", targets, targets)
    cross = queries.T @ targets
    return np.maximum(q_sq[:, None] - 2.0 * cross + t_sq[None, :], 0.0)


def nn_search_batch(queries, target, patch_side: int, p: int = 1,
                    mode: str = "exact", coarse_stride: int = 2,
                    index=None):
    """p nearest target patches for each query column.

    Returns (centers, sqdists) shaped (q, p, 2) and (q, p), distances
    ascending per row. `index` may carry a `target_patch_index` result to
    amortize patch extraction across calls.
    """
    queries = np.asarray(queries, dtype=np.float64)
    if queries.ndim == 1:
        queries = queries[:, None]
    patches, centers = index if index is not None else target_patch_index(
        target, patch_side)
    if patches.shape[0] != queries.shape[0]:
        raise DimensionError(
            f"query dimension {queries.shape[0]} vs patch dimension {patches.shape[0]}")
    total = centers.shape[0]
    if p > total:
        raise ValueError(f"requested {p} neighbors but target has {total} patches")

    if mode == "exact":
        sq = _sqdist_matrix(queries, patches)
        rows = [_select_smallest(sq[i], p) for i in range(sq.shape[0])]
    elif mode == "approx":
        rows = _approx_rows(queries, patches, centers, p, coarse_stride)
        sq = None
    else:
        raise ValueError(f"unknown search mode {mode!r}")

    nq = queries.shape[1]
    out_centers = np.empty((nq, p, 2), dtype=np.intp)
    out_sq = np.empty((nq, p))
    for i, sel in enumerate(rows):
        out_centers[i] = centers[sel]
        if sq is None:
            d = _sqdist_matrix(queries[:, i:i + 1], patches[:, sel])[0]
        else:
            d = sq[i, sel]
        out_sq[i] = d
    return out_centers, out_sq


def _approx_rows(queries, patches, centers, p, coarse_stride):
    """Coarse grid scan, then exact re-ranking of dilated candidates."""
    coarse = np.flatnonzero((centers[:, 0] % coarse_stride == 0)
                            & (centers[:, 1] % coarse_stride == 0))
    if coarse.size < p:
        coarse = np.arange(centers.shape[0])
    sq_coarse = _sqdist_matrix(queries, patches[:, coarse])
    keep = min(max(4 * p, 8), coarse.size)
    rows = []
    # map center coordinates to row indices for the dilation step
    cmin = centers.min(axis=0)
    grid_shape = centers.max(axis=0) - cmin + 1
    lookup = -np.ones(grid_shape, dtype=np.intp)
    lookup[centers[:, 0] - cmin[0], centers[:, 1] - cmin[1]] = np.arange(len(centers))
    for i in range(queries.shape[1]):
        seeds = coarse[_select_smallest(sq_coarse[i], keep)]
        cand = set()
        for r, c in centers[seeds]:
            for dr in range(-coarse_stride, coarse_stride + 1):
                for dc in range(-coarse_stride, coarse_stride + 1):
                    rr, cc = r - cmin[0] + dr, c - cmin[1] + dc
                    if 0 <= rr < grid_shape[0] and 0 <= cc < grid_shape[1]:
                        hit = lookup[rr, cc]
                        if hit >= 0:
                            cand.add(int(hit))
        cand = np.fromiter(sorted(cand), dtype=np.intp)
        sq = _sqdist_matrix(queries[:, i:i + 1], patches[:, cand])[0]
        rows.append(cand[_select_smallest(sq, p)])
    return rows


def nn_search(query, target, patch_side: int, p: int = 1,
              mode: str = "exact") -> NeighborSet:
    """Single-query wrapper around `nn_search_batch` (distances only)."""
    centers, sq = nn_search_batch(query, target, patch_side, p, mode)
    return NeighborSet(centers=centers[0], sqdists=sq[0])


def nl_weights_from_sqdists(sqdists, h_w: float) -> np.ndarray:
    """Normalized exp(-d^2 / h_w) weights; rows sum to 1."""
    if h_w <= 0:
        raise ValueError(f"weight decay h_w must be positive, got {h_w}")
    sq = np.asarray(sqdists, dtype=np.float64)
    shifted = sq - sq.min(axis=-1, keepdims=True)  # guards exp underflow
    w = np.exp(-shifted / h_w)
    return w / w.sum(axis=-1, keepdims=True)


def nl_weights(query, neighbors, h_w: float) -> np.ndarray:
    """Weights of Gaussian-of-distance form for one query patch."""
    query = np.asarray(query, dtype=np.float64).ravel()
    nb = np.asarray(neighbors, dtype=np.float64)
    if nb.ndim == 1:
        nb = nb[:, None]
    if nb.shape[0] != query.size:
        raise DimensionError(
            f"neighbor dimension {nb.shape[0]} vs query dimension {query.size}")
    if nb.shape[1] < 1:
        raise ValueError("at least one neighbor is required")
    diff = nb - query[:, None]
    return nl_weights_from_sqdists(np.einsum("ij,ij->j", diff, diff), h_w)


def nl_predict(neighbor_set: NeighborSet, target, patch_side: int) -> np.ndarray:
    """Weighted sum of neighbor patches; the cross-scale prediction."""
    if neighbor_set.weights is None:
        raise ValueError("neighbor set has no weights; compute nl_weights first")
    patches = extract_patches(_require_gray(target), patch_side,
                              neighbor_set.centers)
    return patches @ neighbor_set.weights


def calibrate_approx(target, patch_side: int, n_queries: int = 64,
                     seed: int = 0, coarse_stride: int = 2) -> float:
    """Measured delta: approx NN distance <= (1 + delta) * exact NN distance."""
    img = _require_gray(target)
    index = target_patch_index(img, patch_side)
    rng = np.random.default_rng(seed)
    queries = rng.uniform(0.0, 1.0, size=(patch_side * patch_side, n_queries))
    _, d_exact = nn_search_batch(queries, img, patch_side, 1, "exact", index=index)
    _, d_approx = nn_search_batch(queries, img, patch_side, 1, "approx",
                                  coarse_stride=coarse_stride, index=index)
    ratios = np.sqrt(d_approx[:, 0]) / np.maximum(np.sqrt(d_exact[:, 0]), 1e-300)
    ratios[d_exact[:, 0] == 0.0] = np.where(
        d_approx[d_exact[:, 0] == 0.0, 0] == 0.0, 1.0, np.inf)
    return float(ratios.max() - 1.0)
