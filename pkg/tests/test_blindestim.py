import warnings

import numpy as np
import pytest

from edgeblur import blindestim, edgesel, imgcore, patchops
from edgeblur.errors import (
    ConvergenceWarning,
    DegenerateDataError,
    DegenerateGradientError,
)

from oracles import dense_kernel_solve, dense_latent_solve


def tight_cfg(**kw):
    base = dict(kernel_size=3, dict_atoms=30, bicg_tol=1e-12, bicg_maxiter=4000)
    base.update(kw)
    return blindestim.EstimationConfig(**base)


def random_mask(rng, shape, count, margin=2):
    mask = np.zeros(shape, dtype=bool)
    rows = rng.integers(margin, shape[0] - margin, count)
    cols = rng.integers(margin, shape[1] - margin, count)
    mask[rows, cols] = True
    return mask


class TestConfig:
    def test_defaults_follow_operating_point(self):
        cfg = blindestim.EstimationConfig()
        assert cfg.patch_side == 5 and cfg.patch_dim == 25
        assert cfg.dict_atoms == 100 and cfg.sparsity == 4
        assert cfg.neighbors == 1 and cfg.inner_iters == 14
        assert np.isclose(cfg.lambda_c, 0.04 / 25)
        assert np.isclose(cfg.lambda_s, 0.04 / 25)
        assert cfg.lambda_g == 0.003
        assert np.isclose(cfg.lambda_h(1000), 0.3)
        assert cfg.kernel_size == 51 and cfg.a == pytest.approx(4 / 3)

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            blindestim.EstimationConfig(kernel_size=16)

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            blindestim.EstimationConfig(lambda_g=-0.1)


class TestKernelUpdate:
    def test_quotient_matches_dense_solve(self, rng):
        for _ in range(3):
            x = rng.uniform(size=(16, 16))
            y = rng.uniform(size=(16, 16))
            mask = rng.uniform(size=(16, 16)) > 0.5
            grad_y = imgcore.gradients(y)
            gx, gy = imgcore.gradients(x)
            masked = (gx * mask, gy * mask)
            lam = 1e-3
            fft_solution = blindestim.kernel_quotient(grad_y, masked, lam)
            dense = dense_kernel_solve(grad_y, masked, lam, (16, 16))
            assert np.abs(fft_solution - dense).max() <= 1e-6

    def test_self_consistent_near_delta(self, rng):
        y = rng.uniform(size=(32, 32))
        grad_y = imgcore.gradients(y)
        kernel = blindestim.update_kernel(grad_y, grad_y, 1e-6, 5)
        assert kernel[2, 2] >= 0.9

    def test_degenerate_gradients_rejected(self):
        zeros = (np.zeros((16, 16)), np.zeros((16, 16)))
        grad_y = imgcore.gradients(np.random.default_rng(0).uniform(size=(16, 16)))
        with pytest.raises(DegenerateGradientError):
            blindestim.update_kernel(grad_y, zeros, 1e-6, 5)

    def test_noiseless_exact_recovery(self, rng):
        x = rng.uniform(size=(32, 32))
        k_true = imgcore.gaussian_kernel(5, 2.0)
        y = imgcore.conv2(x, k_true, "periodic")
        k_est = blindestim.update_kernel(
            imgcore.gradients(y), imgcore.gradients(x), 1e-8, 5)
        assert np.abs(k_est - k_true).max() <= 1e-3

    def test_projection_invariants(self, rng):
        raw = rng.standard_normal((7, 7))
        kernel = blindestim.project_kernel(raw)
        assert np.all(kernel >= 0)
        assert abs(kernel.sum() - 1.0) <= 1e-10
        assert np.all(np.isfinite(kernel))
        nonzero = kernel[kernel > 0]
        assert nonzero.min() >= 0.05 * kernel.max() * (1 - 1e-12)

    def test_projection_all_negative_rejected(self):
        with pytest.raises(DegenerateGradientError):
            blindestim.project_kernel(-np.ones((3, 3)))

    def test_recenter_moves_centroid(self):
        kernel = np.zeros((7, 7))
        kernel[1, 1] = 1.0
        out = blindestim.recenter_kernel(kernel)
        assert out[3, 3] == 1.0

    def test_data_term_decrease(self, rng):
        # the fresh image-size minimizer beats the previous (embedded) kernel
        x = rng.uniform(size=(24, 24))
        y = imgcore.conv2(x, imgcore.gaussian_kernel(5, 1.2), "periodic")
        grad_y = imgcore.gradients(y)
        gx, gy = imgcore.gradients(x)
        mask = rng.uniform(size=(24, 24)) > 0.3
        masked = (gx * mask, gy * mask)
        lam = 0.1

        def energy(kernel_img):
            rx = grad_y[0] - imgcore.conv2(masked[0], kernel_img)
            ry = grad_y[1] - imgcore.conv2(masked[1], kernel_img)
            return np.sum(rx ** 2) + np.sum(ry ** 2) + lam * np.sum(kernel_img ** 2)

        prev = blindestim.update_kernel(grad_y, masked, lam, 5)
        fresh_full = blindestim.kernel_quotient(grad_y, masked, lam)
        fresh_small = blindestim.crop_kernel(fresh_full, 23)
        assert energy(fresh_small) <= energy(prev) + 1e-9


class TestLatentUpdate:
    def test_matches_dense_direct_solve(self, rng):
        cfg = tight_cfg()
        for _ in range(3):
            y = rng.uniform(size=(16, 16))
            x_prev = rng.uniform(size=(16, 16))
            kernel = imgcore.normalize_kernel(rng.uniform(size=(3, 3)))
            mask = random_mask(rng, (16, 16), 10)
            dictionary = rng.standard_normal((25, 30))
            dictionary /= np.linalg.norm(dictionary, axis=0)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                solved = blindestim.update_latent(y, kernel, x_prev, dictionary,
                                                  mask, cfg)
            centers = patchops.mask_centers(mask, 5)
            ratio = 256 / len(centers)
            sparse_t, nl_t, coverage = blindestim.prior_targets(
                x_prev, dictionary, centers, cfg)
            rhs_prior = ratio * (cfg.lambda_c * sparse_t + cfg.lambda_s * nl_t)
            dense = dense_latent_solve(
                y, kernel, centers, coverage, rhs_prior, cfg.lambda_g,
                (cfg.lambda_c + cfg.lambda_s) * ratio, (16, 16))
            assert np.abs(solved - np.clip(dense, 0, 1)).max() <= 1e-5

    def test_delta_kernel_gradient_matching(self, rng):
        cfg = tight_cfg(lambda_c=0.0, lambda_s=0.0, lambda_g=0.0)
        y = rng.uniform(0.2, 0.8, size=(16, 16))
        x_prev = rng.permutation(y.ravel()).reshape(16, 16)  # same mean
        dictionary = rng.standard_normal((25, 30))
        dictionary /= np.linalg.norm(dictionary, axis=0)
        mask = random_mask(rng, (16, 16), 6)
        solved = blindestim.update_latent(y, imgcore.delta_kernel(3), x_prev,
                                          dictionary, mask, cfg)
        sx, sy = imgcore.gradients(solved)
        yx, yy = imgcore.gradients(y)
        assert np.abs(sx - yx).max() <= 1e-6
        assert np.abs(sy - yy).max() <= 1e-6
        assert abs(solved.mean() - x_prev.mean()) <= 1e-9

    def test_empty_mask_equals_zero_weights(self, rng):
        y = rng.uniform(size=(16, 16))
        x_prev = rng.uniform(size=(16, 16))
        kernel = imgcore.normalize_kernel(rng.uniform(size=(3, 3)))
        dictionary = rng.standard_normal((25, 30))
        dictionary /= np.linalg.norm(dictionary, axis=0)
        empty = np.zeros((16, 16), dtype=bool)
        with pytest.warns(ConvergenceWarning):
            a = blindestim.update_latent(y, kernel, x_prev, dictionary, empty,
                                         tight_cfg())
        b = blindestim.update_latent(y, kernel, x_prev, dictionary,
                                     random_mask(rng, (16, 16), 5),
                                     tight_cfg(lambda_c=0.0, lambda_s=0.0))
        assert np.abs(a - b).max() <= 1e-8

    def test_output_clamped(self, rng):
        y = rng.uniform(size=(16, 16))
        x_prev = rng.uniform(size=(16, 16))
        kernel = imgcore.normalize_kernel(rng.uniform(size=(3, 3)))
        dictionary = rng.standard_normal((25, 30))
        dictionary /= np.linalg.norm(dictionary, axis=0)
        out = blindestim.update_latent(y, kernel, x_prev, dictionary,
                                       random_mask(rng, (16, 16), 8), tight_cfg())
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert np.all(np.isfinite(out))


class TestEstimate:
    def test_constant_image_rejected(self):
        with pytest.raises(DegenerateDataError):
            blindestim.estimate(np.full((64, 64), 0.5),
                                blindestim.EstimationConfig(kernel_size=5))

    def test_zero_inner_iters_single_pass(self, rng):
        from conftest import cartoon_image
        y = cartoon_image(size=64, seed=9)
        cfg = blindestim.EstimationConfig(kernel_size=3, inner_iters=0,
                                          dict_atoms=40, seed=3)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            kernel, latent = blindestim.estimate(y, cfg)
            # single level (kernel 3 < patch 5), one pass: the kernel comes
            # from the observed image itself
            y_t = imgcore.edge_taper(y, imgcore.averaging_kernel(3))
            keep = blindestim.level_keep_fraction(cfg, y.shape, 3)
            mask = edgesel.salient_edge_mask(y_t, keep, cfg.presmooth_sigma,
                                             cfg.dog_sigma, cfg.patch_side)
            state = edgesel.init_threshold(*imgcore.gradients(y_t), 9, cfg.r_thresh)
            masked = edgesel.truncate_gradients(*imgcore.gradients(y_t), mask, state)
            expected = blindestim.update_kernel(
                imgcore.gradients(y_t), masked, cfg.lambda_h(y.size), 3,
                recenter=True)
        assert np.array_equal(kernel, expected)

    def test_deterministic_given_seed(self, rng):
        from conftest import cartoon_image
        y = cartoon_image(size=72, seed=2)
        cfg = blindestim.EstimationConfig(kernel_size=5, inner_iters=2,
                                          dict_atoms=50, seed=11)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            k1, x1 = blindestim.estimate(y, cfg)
            k2, x2 = blindestim.estimate(y, cfg)
        assert np.array_equal(k1, k2)
        assert np.array_equal(x1, x2)

    def test_latent_stays_in_range(self, rng):
        from conftest import cartoon_image
        y = cartoon_image(size=72, seed=5)
        cfg = blindestim.EstimationConfig(kernel_size=5, inner_iters=2,
                                          dict_atoms=50, seed=0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            kernel, latent = blindestim.estimate(y, cfg)
        assert latent.min() >= 0.0 and latent.max() <= 1.0
        assert np.all(np.isfinite(latent))
        assert np.all(kernel >= 0) and abs(kernel.sum() - 1.0) < 1e-10

    def test_progress_traces(self, rng):
        from conftest import cartoon_image
        y = cartoon_image(size=72, seed=5)
        cfg = blindestim.EstimationConfig(kernel_size=5, inner_iters=2,
                                          dict_atoms=50, seed=0)
        traces = []
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            blindestim.estimate(y, cfg, progress=traces.append)
        assert traces
        levels = sorted({t.level for t in traces})
        assert levels[0] == 1 and levels[-1] == traces[0].depth
        assert all(t.mask_size > 0 for t in traces)


class TestLevelHelpers:
    def test_ceil_to_odd(self):
        assert blindestim.ceil_to_odd(4.03) == 5
        assert blindestim.ceil_to_odd(4.0) == 5
        assert blindestim.ceil_to_odd(5.0) == 5
        assert blindestim.ceil_to_odd(1.2) == 3

    def test_level_keep_fraction_floor(self):
        cfg = blindestim.EstimationConfig(kernel_size=17)
        # tiny level: floored above 2%
        small = blindestim.level_keep_fraction(cfg, (38, 38), 5)
        assert small > cfg.keep_fraction
        # full-resolution level: the 2% rule binds
        large = blindestim.level_keep_fraction(cfg, (255, 255), 17)
        assert large == pytest.approx(cfg.keep_fraction)
