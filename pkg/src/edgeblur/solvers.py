"""Bi-conjugate gradient solver for the latent-image normal equations.

Hand-rolled rather than scipy's so the best iterate (not the last) is
returned on non-convergence, the residual history is available for
progress reporting, and a preconditioner can be applied (the latent system
is a circulant stack plus a diagonal, for which a Fourier-diagonal
preconditioner works well). The operator here is symmetric, for which
BICG's shadow sequence coincides with CG, but the implementation is the
general preconditioned one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class BicgResult:
    x: np.ndarray
    iterations: int
    residual: float        # relative to ||b||
    converged: bool
    residual_history: list


def bicg(matvec, b, x0=None, rmatvec=None, minv=None, rtol: float = 1e-8,
         maxiter: int = 200) -> BicgResult:
    """Solve matvec(x) = b from x0; returns the best iterate seen.

    `minv` applies an (symmetric) approximate inverse as preconditioner.
    Convergence is judged on the true residual, not the preconditioned one.
    """
    b = np.asarray(b, dtype=np.float64).ravel()
    if rmatvec is None:
        rmatvec = matvec  # symmetric operator
    if minv is None:
        minv = lambda v: v
    x = np.zeros_like(b) if x0 is None else np.asarray(x0, dtype=np.float64).ravel().copy()

    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        b_norm = 1.0
    r = b - matvec(x)
    rt = r.copy()
    z = minv(r)
    zt = minv(rt)
    p = z.copy()
    pt = zt.copy()
    rho = rt @ z

    res = np.linalg.norm(r) / b_norm
    best_x, best_res = x.copy(), res
    history = [res]
    if res <= rtol:
        return BicgResult(x, 0, res, True, history)

    for it in range(1, maxiter + 1):
        q = matvec(p)
        qt = rmatvec(pt)
        denom = pt @ q
        if denom == 0.0 or not np.isfinite(denom):
            break  # breakdown; best iterate below
        alpha = rho / denom
        x = x + alpha * p
        r = r - alpha * q
        rt = rt - alpha * qt
        res = np.linalg.norm(r) / b_norm
        history.append(res)
        if res < best_res:
            best_res = res
            best_x = x.copy()
        if res <= rtol:
            return BicgResult(x, it, res, True, history)
        z = minv(r)
        zt = minv(rt)
        rho_new = rt @ z
        if rho_new == 0.0 or not np.isfinite(rho_new):
            break
        beta = rho_new / rho
        rho = rho_new
        p = z + beta * p
        pt = zt + beta * pt

    return BicgResult(best_x, len(history) - 1, best_res, False, history)
