"""K-SVD dictionary learning and orthogonal matching pursuit.

The dictionary is an (n, t) matrix of unit-norm atoms learned from edge
patches; sparse codes are limited to T nonzero coefficients. OMP is
implemented batched over patches (the correlation step is one GEMM and the
support solves are batched normal equations); the single-patch entry point
wraps the batch path so both produce identical results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDataError, DimensionError, TrainingDataError

_RESIDUAL_TOL = 1e-12


@dataclass
class SparseCode:
    """Support indices (selection order), matching coefficients, bound T."""
    support: np.ndarray
    coeffs: np.ndarray
    t_max: int

    def dense(self, t: int) -> np.ndarray:
        out = np.zeros(t)
        out[self.support] = self.coeffs
        return out


def _as_dictionary(dictionary) -> np.ndarray:
    D = np.asarray(dictionary, dtype=np.float64)
    if D.ndim != 2:
        raise DimensionError(f"dictionary must be 2-D, got shape {D.shape}")
    return D


def _batch_solve(G, b):
    try:
        return np.linalg.solve(G, b[..., None])[..., 0]
    except np.linalg.LinAlgError:
        return np.einsum("aij,aj->ai", np.linalg.pinv(G), b)


def omp_encode_batch(dictionary, patches, T: int, tol: float = _RESIDUAL_TOL):
    """Greedy OMP for every column of `patches`; returns (t, m) coefficients.

    Each step picks the atom with the largest absolute residual correlation
    (ties go to the lowest index), then re-fits all selected coefficients by
    least squares. A patch stops early once its residual norm is <= tol.
    """
    D = _as_dictionary(dictionary)
    S = np.asarray(patches, dtype=np.float64)
    if S.ndim == 1:
        S = S[:, None]
    n, t = D.shape
    if S.shape[0] != n:
        raise DimensionError(f"patches have dimension {S.shape[0]}, expected {n}")
    m = S.shape[1]
    T = min(int(T), t)
    gram = D.T @ D
    corr0 = D.T @ S
    sq_norm = np.einsum("ij,ij->j", S, S)

    support = np.full((m, max(T, 1)), -1, dtype=np.intp)
    coef_buf = np.zeros((m, max(T, 1)))
    n_sel = np.zeros(m, dtype=np.intp)
    resid_corr = corr0.copy()
    resid_sq = sq_norm.copy()
    active = resid_sq > tol * tol

    for step in range(T):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        scores = np.abs(resid_corr[:, idx])
        for prev in range(step):
            scores[support[idx, prev], np.arange(idx.size)] = -1.0
        picks = np.argmax(scores, axis=0)
        support[idx, step] = picks
        k = step + 1
        sup = support[idx, :k]
        G = gram[sup[:, :, None], sup[:, None, :]]
        b = corr0[sup, idx[:, None]]
        coef = _batch_solve(G, b)
        coef_buf[idx, :k] = coef
        n_sel[idx] = k
        resid_corr[:, idx] = corr0[:, idx] - np.einsum(
            "tak,ak->ta", gram[:, sup], coef)
        resid_sq[idx] = np.maximum(sq_norm[idx] - np.einsum("ak,ak->a", coef, b), 0.0)
        active[idx] = resid_sq[idx] > tol * tol

    codes = np.zeros((t, m))
    for k in range(1, T + 1):
        rows = np.flatnonzero(n_sel == k)
        if rows.size:
            codes[support[rows, :k], rows[:, None]] = coef_buf[rows, :k]
    return codes


def omp_encode(dictionary, patch, T: int, tol: float = _RESIDUAL_TOL) -> SparseCode:
    """Sparse-code a single patch; see `omp_encode_batch` for the algorithm."""
    D = _as_dictionary(dictionary)
    patch = np.asarray(patch, dtype=np.float64).ravel()
    dense = omp_encode_batch(D, patch[:, None], T, tol)[:, 0]
    # recover selection order by replaying the greedy picks
    order = _selection_order(D, patch, dense, T, tol)
    return SparseCode(support=order, coeffs=dense[order], t_max=T)


def _selection_order(D, patch, dense, T, tol):
    chosen = np.flatnonzero(dense)
    if chosen.size == 0:
        return np.empty(0, dtype=np.intp)
    order = []
    residual = patch.copy()
    remaining = set(chosen.tolist())
    while remaining:
        corr = np.abs(D.T @ residual)
        pick = max(remaining, key=lambda j: (corr[j], -j))
        order.append(pick)
        remaining.discard(pick)
        sub = D[:, order]
        sol, *_ = np.linalg.lstsq(sub, patch, rcond=None)
        residual = patch - sub @ sol
    return np.asarray(order, dtype=np.intp)


def reconstruction_errors(dictionary, patches, codes) -> np.ndarray:
    """Per-column squared reconstruction error ||s - D a||^2."""
    D = _as_dictionary(dictionary)
    diff = np.asarray(patches, dtype=np.float64) - D @ codes
    return np.einsum("ij,ij->j", diff, diff)


def _canonical_sign(atom, coeff_row=None):
    peak = np.argmax(np.abs(atom))
    if atom[peak] < 0:
        atom = -atom
        if coeff_row is not None:
            coeff_row = -coeff_row
    return atom, coeff_row


def ksvd_train(samples, t: int, T: int, iterations: int = 10, seed: int = 0,
               return_objectives: bool = False):
    """Learn an (n, t) unit-norm dictionary by alternating OMP and atom updates.

    The warm start draws t distinct training samples (seeded). Each sweep
    codes all samples, then updates every used atom with a rank-1 SVD of its
    restricted residual; unused or duplicate atoms are replaced by the worst
    reconstructed samples. A per-sample guard keeps the previous sweep's code
    whenever fresh OMP would be worse, so the training objective never
    increases from sweep to sweep.
    """
    S = np.asarray(samples, dtype=np.float64)
    if S.ndim != 2:
        raise DimensionError(f"samples must be 2-D, got shape {S.shape}")
    n, m = S.shape
    if m < t:
        raise TrainingDataError(f"{m} samples cannot support {t} atoms")
    if n > m:
        raise TrainingDataError(f"patch dimension {n} exceeds sample count {m}")
    col_sq = np.einsum("ij,ij->j", S, S)
    nonzero = np.flatnonzero(col_sq > 1e-24)
    if nonzero.size == 0:
        raise DegenerateDataError("all training samples are zero")

    rng = np.random.default_rng(seed)
    if nonzero.size >= t:
        init = rng.choice(nonzero, size=t, replace=False)
    else:
        init = np.concatenate(
            [nonzero, rng.choice(nonzero, size=t - nonzero.size, replace=True)])
    D = S[:, init].copy()
    D /= np.linalg.norm(D, axis=0, keepdims=True)
    for j in range(t):
        D[:, j], _ = _canonical_sign(D[:, j])

    codes = None
    objectives = []
    for _ in range(max(int(iterations), 1)):
        new_codes = omp_encode_batch(D, S, T)
        if codes is not None:
            worse = (reconstruction_errors(D, S, new_codes)
                     > reconstruction_errors(D, S, codes))
            new_codes[:, worse] = codes[:, worse]
        codes = new_codes

        residual = S - D @ codes
        for j in range(t):
            users = np.flatnonzero(codes[j] != 0.0)
            if users.size == 0:
                continue
            restricted = residual[:, users] + np.outer(D[:, j], codes[j, users])
            if users.size == 1:
                norm = np.linalg.norm(restricted[:, 0])
                if norm <= 1e-15:
                    codes[j, users] = 0.0
                    continue
                atom, row = restricted[:, 0] / norm, np.array([norm])
            else:
                u, s, vt = np.linalg.svd(restricted, full_matrices=False)
                atom, row = u[:, 0], s[0] * vt[0]
            atom, row = _canonical_sign(atom, row)
            D[:, j] = atom
            codes[j, users] = row
            residual[:, users] = restricted - np.outer(atom, row)

        _repair_atoms(D, codes, S, col_sq)
        objectives.append(float(reconstruction_errors(D, S, codes).sum()))

    if return_objectives:
        return D, objectives
    return D


def _repair_atoms(D, codes, S, col_sq, coherence_tol: float = 1e-8) -> None:
    """Replace unused and duplicate atoms with badly reconstructed samples."""
    t = D.shape[1]
    err = reconstruction_errors(D, S, codes)
    order = [i for i in np.argsort(-err, kind="stable") if col_sq[i] > 1e-24]
    cursor = 0

    def next_sample():
        nonlocal cursor
        if cursor >= len(order):
            return None
        s = S[:, order[cursor]]
        cursor += 1
        atom, _ = _canonical_sign(s / np.linalg.norm(s))
        return atom

    for j in range(t):
        if not np.any(codes[j] != 0.0):
            atom = next_sample()
            if atom is not None:
                D[:, j] = atom

    for _ in range(3):  # coherent pairs are rare; a few passes suffice
        gram = np.abs(D.T @ D)
        np.fill_diagonal(gram, 0.0)
        i, j = np.unravel_index(np.argmax(gram), gram.shape)
        if gram[i, j] < 1.0 - coherence_tol:
            break
        keep, drop = (i, j) if np.sum(codes[i] ** 2) >= np.sum(codes[j] ** 2) else (j, i)
        sign = np.sign(D[:, keep] @ D[:, drop]) or 1.0
        codes[keep] += sign * codes[drop]
        codes[drop] = 0.0
        atom = next_sample()
        if atom is not None:
            D[:, drop] = atom


# ---------------------------------------------------------------------------
# plain-text serialization: header "n t", then one atom column per line
# ---------------------------------------------------------------------------

def save_dictionary(path, dictionary) -> None:
    D = _as_dictionary(dictionary)
    n, t = D.shape
    with open(path, "w") as fh:
        fh.write(f"{n} {t}\n")
        for j in range(t):
            fh.write(" ".join(format(v, ".17g") for v in D[:, j]) + "\n")


def load_dictionary(path) -> np.ndarray:
    with open(path) as fh:
        tokens = fh.read().split()
    if len(tokens) < 2:
        raise ValueError(f"truncated dictionary file {path}")
    n, t = int(tokens[0]), int(tokens[1])
    values = np.array(tokens[2:], dtype=np.float64)
    if values.size != n * t:
        raise ValueError(
            f"dictionary file {path} holds {values.size} values, expected {n * t}")
    return values.reshape(t, n).T
