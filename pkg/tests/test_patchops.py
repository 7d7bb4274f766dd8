import numpy as np
import pytest

from edgeblur import patchops
from edgeblur.errors import DimensionError, PatchIndexError


class TestExtract:
    def test_whole_image_patch(self, rng):
        img = rng.uniform(size=(5, 5))
        patches = patchops.extract_patches(img, 5, [(2, 2)])
        assert patches.shape == (25, 1)
        assert np.array_equal(patches[:, 0], img.ravel())

    def test_constant_image(self):
        img = np.full((9, 9), 0.7)
        centers = patchops.valid_centers(img.shape, 3)
        patches = patchops.extract_patches(img, 3, centers)
        assert np.all(patches == 0.7)

    def test_matches_direct_gather(self, rng):
        img = rng.uniform(size=(12, 12))
        centers = patchops.valid_centers(img.shape, 5)
        patches = patchops.extract_patches(img, 5, centers)
        assert patches.shape == (25, 8 * 8)
        for col, (r, c) in enumerate(centers):
            ref = img[r - 2:r + 3, c - 2:c + 3].ravel()
            assert np.array_equal(patches[:, col], ref)

    def test_out_of_bounds(self, rng):
        img = rng.uniform(size=(8, 8))
        with pytest.raises(PatchIndexError):
            patchops.extract_patches(img, 5, [(1, 4)])

    def test_even_patch_side_rejected(self, rng):
        with pytest.raises(ValueError):
            patchops.extract_patches(rng.uniform(size=(8, 8)), 4, [(4, 4)])


class TestAccumulate:
    def test_single_whole_patch(self, rng):
        patch = rng.uniform(size=(25, 1))
        total, coverage = patchops.accumulate_patches(patch, 5, [(2, 2)], (5, 5))
        assert np.array_equal(total, patch[:, 0].reshape(5, 5))
        assert np.all(coverage == 1.0)

    def test_adjoint_identity(self, rng):
        img = rng.standard_normal((10, 11))
        centers = patchops.valid_centers(img.shape, 3)
        patches = rng.standard_normal((9, len(centers)))
        lhs = np.sum(patchops.extract_patches(img, 3, centers) * patches)
        total, _ = patchops.accumulate_patches(patches, 3, centers, img.shape)
        rhs = np.sum(img * total)
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))

    def test_double_counting(self):
        patches = np.ones((9, 2))
        total, coverage = patchops.accumulate_patches(
            patches, 3, [(3, 3), (3, 3)], (7, 7))
        assert np.all(coverage[2:5, 2:5] == 2.0)
        assert np.all(total[2:5, 2:5] == 2.0)
        assert coverage.sum() == 18.0

    def test_accumulate_of_ones_equals_coverage(self, rng):
        shape = (9, 9)
        centers = patchops.valid_centers(shape, 3, stride=2)
        ones = np.ones((9, len(centers)))
        total, coverage = patchops.accumulate_patches(ones, 3, centers, shape)
        assert np.array_equal(total, coverage)

    def test_coverage_bounds(self, rng):
        shape = (10, 10)
        centers = patchops.valid_centers(shape, 3)
        patches = rng.standard_normal((9, len(centers)))
        _, coverage = patchops.accumulate_patches(patches, 3, centers, shape)
        assert np.all(coverage >= 0)
        assert np.all(coverage <= 9)
        assert np.array_equal(coverage, np.round(coverage))

    def test_shape_mismatch(self, rng):
        with pytest.raises(DimensionError):
            patchops.accumulate_patches(np.ones((9, 3)), 3, [(2, 2)], (6, 6))
        with pytest.raises(DimensionError):
            patchops.accumulate_patches(np.ones((8, 1)), 3, [(2, 2)], (6, 6))


class TestCenters:
    def test_valid_centers_raster_order(self):
        centers = patchops.valid_centers((6, 7), 3)
        assert centers[0].tolist() == [1, 1]
        flat = centers[:, 0] * 7 + centers[:, 1]
        assert np.all(np.diff(flat) > 0)

    def test_mask_centers_clears_border(self):
        mask = np.ones((8, 8), dtype=bool)
        centers = patchops.mask_centers(mask, 5)
        assert centers[:, 0].min() == 2 and centers[:, 0].max() == 5
        assert len(centers) == 16
