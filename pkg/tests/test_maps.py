import numpy as np
import pytest

from salseg.maps import (
    FixationMap,
    SaliencyMap,
    SalientRegionMap,
    gaussian_kernel,
    quantize,
    restrict,
    saliency_from_fixations,
    to_display,
)


def blur_oracle(hits, sigma):
    """Direct convolution sum of the truncated normalized Gaussian, rescaled
    so the maximum is 255. Independent of the implementation's fft/separable
    path."""
    radius = int(np.ceil(3.0 * sigma))
    size = 2 * radius + 1
    kernel = np.empty((size, size))
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            kernel[dy + radius, dx + radius] = np.exp(
                -(dy * dy + dx * dx) / (2.0 * sigma * sigma)
            )
    kernel /= kernel.sum()
    h, w = hits.shape
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for dy in range(-radius, radius + 1):
                for dx in range(-radius, radius + 1):
                    sy, sx = y + dy, x + dx
                    if 0 <= sy < h and 0 <= sx < w and hits[sy, sx]:
                        acc += 255.0 * kernel[radius - dy, radius - dx]
            out[y, x] = acc
    return out * (255.0 / out.max())


class TestSaliencyFromFixations:
    def test_single_center_hit_peaks_at_hit(self):
        fm = FixationMap.from_points([(4, 4)], 9, 9)
        sm = saliency_from_fixations(fm, sigma=1.0)
        assert sm.values[4, 4] == 255.0
        assert sm.values.argmax() == 4 * 9 + 4
        # strictly decreasing with distance along the axes
        row = sm.values[4]
        assert np.all(np.diff(row[:5]) > 0) and np.all(np.diff(row[4:]) < 0)

    def test_two_opposite_corners_symmetric(self):
        fm = FixationMap.from_points([(0, 0), (6, 6)], 7, 7)
        sm = saliency_from_fixations(fm, sigma=1.0)
        np.testing.assert_allclose(sm.values, sm.values[::-1, ::-1], atol=1e-12)

    def test_matches_direct_convolution_oracle(self):
        fm = FixationMap.from_points([(2, 2)], 5, 5)
        sm = saliency_from_fixations(fm, sigma=0.5)
        expected = blur_oracle(fm.hits, 0.5)
        np.testing.assert_allclose(sm.values, expected, atol=1e-9)

    def test_multi_hit_matches_oracle(self):
        rng = np.random.default_rng(11)
        hits = rng.uniform(size=(12, 9)) < 0.1
        hits[3, 4] = True
        fm = FixationMap(hits)
        sm = saliency_from_fixations(fm, sigma=1.5)
        np.testing.assert_allclose(sm.values, blur_oracle(hits, 1.5), atol=1e-9)

    def test_max_is_exactly_255_and_nonnegative(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            hits = rng.uniform(size=(16, 16)) < 0.05
            if not hits.any():
                hits[0, 0] = True
            sm = saliency_from_fixations(FixationMap(hits), sigma=2.0)
            assert sm.values.max() == 255.0
            assert sm.values.min() >= 0.0

    def test_empty_map_rejected(self):
        fm = FixationMap(np.zeros((4, 4), dtype=bool))
        with pytest.raises(ValueError, match="empty fixation map"):
            saliency_from_fixations(fm, sigma=1.0)

    def test_bad_sigma_rejected(self):
        fm = FixationMap.from_points([(1, 1)], 4, 4)
        for sigma in (0.0, -2.0):
            with pytest.raises(ValueError):
                saliency_from_fixations(fm, sigma=sigma)

    def test_kernel_normalized(self):
        for sigma in (0.5, 1.0, 19.0):
            k = gaussian_kernel(sigma)
            assert k.shape[0] == 2 * int(np.ceil(3 * sigma)) + 1
            assert k.sum() == pytest.approx(1.0, abs=1e-12)


class TestQuantize:
    def test_bottom_of_lowest_bin(self):
        sm = SaliencyMap(np.array([[0.0]]))
        assert quantize(sm, 3).levels[0, 0] == 0

    def test_k3_boundaries(self):
        sm = SaliencyMap(np.array([[84.9, 85.0, 170.0]]))
        assert quantize(sm, 3).levels.tolist() == [[0, 1, 2]]

    def test_top_bin_closed_at_255(self):
        sm = SaliencyMap(np.array([[255.0]]))
        assert quantize(sm, 3).levels[0, 0] == 2

    def test_monotone_in_value(self):
        ramp = SaliencyMap(np.arange(256, dtype=float).reshape(1, 256))
        for k in range(2, 17):
            levels = quantize(ramp, k).levels[0]
            assert np.all(np.diff(levels) >= 0)
            assert levels[0] == 0 and levels[-1] == k - 1

    def test_k_below_2_rejected(self):
        sm = SaliencyMap(np.zeros((2, 2)))
        for k in (1, 0, -3):
            with pytest.raises(ValueError):
                quantize(sm, k)

    def test_display_roundtrip_idempotent(self):
        rng = np.random.default_rng(3)
        sm = SaliencyMap(rng.uniform(0, 255, (14, 11)))
        for k in range(2, 17):
            q = quantize(sm, k)
            again = quantize(to_display(q), k)
            np.testing.assert_array_equal(again.levels, q.levels)


class TestRestrict:
    def test_all_ones_binary_is_identity(self):
        q = SalientRegionMap(np.array([[2, 1], [0, 2]]), 3)
        ones = SalientRegionMap(np.ones((2, 2), dtype=int), 2)
        np.testing.assert_array_equal(restrict(q, ones).levels, q.levels)

    def test_all_zero_binary_inhibits_everything(self):
        q = SalientRegionMap(np.array([[2, 1], [0, 2]]), 3)
        zeros = SalientRegionMap(np.zeros((2, 2), dtype=int), 2)
        assert restrict(q, zeros).levels.max() == 0

    def test_elementwise_mask(self):
        q = SalientRegionMap(np.array([[2, 1], [0, 2]]), 3)
        b = SalientRegionMap(np.array([[1, 0], [1, 1]]), 2)
        np.testing.assert_array_equal(restrict(q, b).levels, [[2, 0], [0, 2]])

    def test_num_levels_preserved(self):
        q = SalientRegionMap(np.array([[4, 1]]), 5)
        b = SalientRegionMap(np.array([[0, 1]]), 2)
        assert restrict(q, b).num_levels == 5

    def test_dimension_mismatch_rejected(self):
        q = SalientRegionMap(np.zeros((2, 2), dtype=int), 3)
        b = SalientRegionMap(np.zeros((3, 2), dtype=int), 2)
        with pytest.raises(ValueError):
            restrict(q, b)

    def test_non_binary_mask_rejected(self):
        q = SalientRegionMap(np.zeros((2, 2), dtype=int), 3)
        b = SalientRegionMap(np.zeros((2, 2), dtype=int), 3)
        with pytest.raises(ValueError):
            restrict(q, b)

    def test_never_raises_level_and_support_containment(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            k = int(rng.integers(2, 7))
            q = SalientRegionMap(rng.integers(0, k, (6, 5)), k)
            b = SalientRegionMap(rng.integers(0, 2, (6, 5)), 2)
            out = restrict(q, b)
            assert np.all(out.levels <= q.levels)
            assert np.all((out.levels > 0) <= (b.levels > 0))


class TestToDisplay:
    def test_binary_display(self):
        srm = SalientRegionMap(np.array([[0, 1]]), 2)
        assert to_display(srm).values.tolist() == [[0.0, 255.0]]

    def test_three_level_display_rounds_half_up(self):
        srm = SalientRegionMap(np.array([[0, 1, 2]]), 3)
        assert to_display(srm).values.tolist() == [[0.0, 128.0, 255.0]]

    def test_five_level_value(self):
        srm = SalientRegionMap(np.array([[3]]), 5)
        # round(3 * 255 / 4) = round(191.25)
        assert to_display(srm).values[0, 0] == 191.0

    def test_display_monotone_in_level(self):
        for k in range(2, 17):
            srm = SalientRegionMap(np.arange(k).reshape(1, k), k)
            vals = to_display(srm).values[0]
            assert np.all(np.diff(vals) > 0)
            assert vals[0] == 0.0 and vals[-1] == 255.0


class TestTypeInvariants:
    def test_saliency_range_enforced(self):
        with pytest.raises(ValueError):
            SaliencyMap(np.array([[-1.0]]))
        with pytest.raises(ValueError):
            SaliencyMap(np.array([[256.0]]))

    def test_level_range_enforced(self):
        with pytest.raises(ValueError):
            SalientRegionMap(np.array([[3]]), 3)
        with pytest.raises(ValueError):
            SalientRegionMap(np.array([[0]]), 1)

    def test_fixations_from_points_bounds(self):
        with pytest.raises(ValueError):
            FixationMap.from_points([(5, 0)], 5, 5)
