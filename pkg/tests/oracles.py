"""Independent reference implementations used as test oracles.

Everything here recomputes results through a different route than the
package (explicit loops, dense matrices, exhaustive scans) so agreement is
meaningful.
"""

import numpy as np


def conv2_loop(image, kernel):
    """Quadruple-loop periodic convolution with a centered kernel."""
    h, w = image.shape
    kh, kw = kernel.shape
    cu, cv = kh // 2, kw // 2
    out = np.zeros_like(image)
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for u in range(kh):
                for v in range(kw):
                    acc += kernel[u, v] * image[(i - (u - cu)) % h,
                                                (j - (v - cv)) % w]
            out[i, j] = acc
    return out


def gradients_loop(image):
    """Index-difference forward gradients with periodic wrap."""
    h, w = image.shape
    gx = np.zeros_like(image)
    gy = np.zeros_like(image)
    for i in range(h):
        for j in range(w):
            gx[i, j] = image[i, (j + 1) % w] - image[i, j]
            gy[i, j] = image[(i + 1) % h, j] - image[i, j]
    return gx, gy


def circulant_from_filter(filt, shape):
    """Dense matrix of 'convolve with filt' where filt is an image-size field.

    Row (i, j) holds filt shifted by (i, j): y = C @ h for image-size h.
    """
    h, w = shape
    rows = np.arange(h)[:, None, None, None]
    cols = np.arange(w)[None, :, None, None]
    mrows = np.arange(h)[None, None, :, None]
    mcols = np.arange(w)[None, None, None, :]
    return filt[(rows - mrows) % h, (cols - mcols) % w].reshape(h * w, h * w)


def circulant_from_kernel(kernel, shape):
    """Dense matrix of 'periodic convolution with a centered small kernel'."""
    h, w = shape
    kh, kw = kernel.shape
    embedded = np.zeros(shape)
    embedded[:kh, :kw] = kernel
    embedded = np.roll(embedded, (-(kh // 2), -(kw // 2)), axis=(0, 1))
    return circulant_from_filter(embedded, shape)


def difference_matrices(shape):
    """Dense forward-difference operators with periodic wrap."""
    h, w = shape
    n = h * w
    gx = np.zeros((n, n))
    gy = np.zeros((n, n))
    for i in range(h):
        for j in range(w):
            row = i * w + j
            gx[row, i * w + (j + 1) % w] += 1.0
            gx[row, row] -= 1.0
            gy[row, ((i + 1) % h) * w + j] += 1.0
            gy[row, row] -= 1.0
    return gx, gy


def dense_kernel_solve(grad_y, grad_x_masked, lambda_h, shape):
    """Regularized least-squares blur estimate via explicit circulants."""
    gx_y, gy_y = grad_y
    gx_m, gy_m = grad_x_masked
    a = np.vstack([circulant_from_filter(gx_m, shape),
                   circulant_from_filter(gy_m, shape)])
    b = np.concatenate([gx_y.ravel(), gy_y.ravel()])
    n = shape[0] * shape[1]
    return np.linalg.solve(a.T @ a + lambda_h * np.eye(n), a.T @ b).reshape(shape)


def dense_latent_solve(y, kernel, mask_centers_arr, coverage, rhs_prior,
                       lambda_g, prior_weight, shape):
    """Direct solve of the latent normal equations via dense assembly."""
    n = shape[0] * shape[1]
    conv = circulant_from_kernel(kernel, shape)
    gx, gy = difference_matrices(shape)
    grad_sum = gx.T @ gx + gy.T @ gy
    system = (conv.T @ conv + lambda_g * np.eye(n)) @ grad_sum
    system += np.diag(prior_weight * coverage.ravel())
    rhs = conv.T @ (grad_sum @ y.ravel()) + rhs_prior.ravel()
    return np.linalg.solve(system, rhs).reshape(shape)


def omp_reference(dictionary, patch, sparsity, tol=1e-12):
    """Plain greedy OMP written independently (loops + lstsq)."""
    residual = patch.astype(float).copy()
    support = []
    coeffs = np.zeros(dictionary.shape[1])
    for _ in range(sparsity):
        if np.linalg.norm(residual) <= tol:
            break
        scores = np.abs(dictionary.T @ residual)
        scores[support] = -1.0
        support.append(int(np.argmax(scores)))
        sub = dictionary[:, support]
        sol, *_ = np.linalg.lstsq(sub, patch, rcond=None)
        residual = patch - sub @ sol
    coeffs[support] = sol if support else 0.0
    return coeffs


def exhaustive_nn(query, target, patch_side, p):
    """All-centers scan returning the p closest patches (ties by raster)."""
    radius = patch_side // 2
    h, w = target.shape
    entries = []
    for r in range(radius, h - radius):
        for c in range(radius, w - radius):
            patch = target[r - radius:r + radius + 1,
                           c - radius:c + radius + 1].ravel()
            entries.append(((r, c), float(np.sum((patch - query) ** 2))))
    entries.sort(key=lambda item: (item[1], item[0][0], item[0][1]))
    return entries[:p]
