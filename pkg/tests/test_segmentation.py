"""Grid and SLIC segmentation behavior."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from pixattr import ColorSpace, Image, grid_segment, slic_segment, validate


class TestGrid:
    def test_even_4x4_layout(self):
        seg = grid_segment(4, 4, 2, 2)
        expected = np.array([
            [0, 0, 1, 1],
            [0, 0, 1, 1],
            [2, 2, 3, 3],
            [2, 2, 3, 3],
        ])
        np.testing.assert_array_equal(seg.labels, expected)
        assert seg.n_segments == 4

    def test_uneven_5x5_cell_sizes(self):
        seg = grid_segment(5, 5, 2, 2)
        counts = np.bincount(seg.labels.ravel())
        # floor rounding puts the larger halves first: 3x3, 3x2, 2x3, 2x2
        np.testing.assert_array_equal(counts, [9, 6, 6, 4])

    def test_paper_scale_grid(self):
        seg = grid_segment(224, 224, 7, 7)
        assert seg.n_segments == 49
        counts = np.bincount(seg.labels.ravel())
        assert (counts == 32 * 32).all()

    def test_rejects_degenerate_and_oversized_grids(self):
        with pytest.raises(ValueError, match="at least one row"):
            grid_segment(4, 4, 0, 2)
        with pytest.raises(ValueError, match="does not fit"):
            grid_segment(4, 4, 5, 2)

    def test_always_valid(self):
        assert validate(grid_segment(7, 11, 3, 2)) == []

    @given(
        height=st.integers(2, 40), width=st.integers(2, 40),
        rows=st.integers(1, 6), cols=st.integers(1, 6),
    )
    @settings(max_examples=60)
    def test_bands_are_contiguous_and_dense(self, height, width, rows, cols):
        if rows > height or cols > width or rows * cols < 2:
            return
        seg = grid_segment(height, width, rows, cols)
        assert validate(seg) == []
        # each grid cell is one contiguous rectangle
        for k in range(seg.n_segments):
            ys, xs = np.nonzero(seg.labels == k)
            assert ys.size == (ys.max() - ys.min() + 1) * (xs.max() - xs.min() + 1)


def _block_image(seed: int = 7) -> Image:
    rng = np.random.Generator(np.random.Philox(key=seed))
    base = rng.random((14, 14, 3))
    data = np.kron(base, np.ones((16, 16, 1)))
    return Image(224, 224, 3, data, ColorSpace.UNIT_0_1)


class TestSlic:
    def test_two_color_halves_split_at_the_boundary(self):
        data = np.zeros((10, 20, 3))
        data[:, 10:] = 1.0
        seg = slic_segment(Image(10, 20, 3, data, ColorSpace.UNIT_0_1), 2)
        assert seg.n_segments == 2
        assert (seg.labels[:, :10] == seg.labels[0, 0]).all()
        assert (seg.labels[:, 10:] == seg.labels[0, 10]).all()
        assert seg.labels[0, 0] != seg.labels[0, 10]
        # first-occurrence relabeling puts the top-left segment at id 0
        assert seg.labels[0, 0] == 0

    def test_single_color_image_falls_back_to_grid(self):
        img = Image(56, 56, 1, np.full((56, 56, 1), 0.5), ColorSpace.UNIT_0_1)
        seg = slic_segment(img, 4)
        assert seg.meta.get("fallback") == "grid"
        assert seg.n_segments == 4
        assert (np.bincount(seg.labels.ravel()) == 784).all()

    def test_segments_are_connected_and_dense(self):
        seg = slic_segment(_block_image(), 49)
        assert validate(seg) == []
        for k in range(seg.n_segments):
            _, n_blobs = ndimage.label(seg.labels == k)
            assert n_blobs == 1

    def test_minimum_segment_size_floor(self):
        img = _block_image(seed=11)
        n = 49
        seg = slic_segment(img, n)
        floor = (img.height * img.width / n) / 4
        assert np.bincount(seg.labels.ravel()).min() >= floor

    def test_deterministic(self):
        img = _block_image(seed=3)
        a = slic_segment(img, 30)
        b = slic_segment(img, 30)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_segment_count_near_request(self):
        seg = slic_segment(_block_image(seed=5), 49)
        assert 2 <= seg.n_segments <= 49

    def test_compactness_trades_color_for_shape(self):
        """Very high compactness makes clusters ignore color structure."""
        img = _block_image(seed=13)
        loose = slic_segment(img, 16, compactness=1.0)
        tight = slic_segment(img, 16, compactness=1000.0)
        # with spatial distance dominating, cells are near-rectangular, so
        # their bounding-box fill ratio is higher than in the color-driven run
        def fill_ratio(seg):
            ratios = []
            for k in range(seg.n_segments):
                ys, xs = np.nonzero(seg.labels == k)
                area = (ys.max() - ys.min() + 1) * (xs.max() - xs.min() + 1)
                ratios.append(ys.size / area)
            return float(np.mean(ratios))
        assert fill_ratio(tight) >= fill_ratio(loose)

    def test_requires_unit_space_and_sane_count(self):
        raw = Image(8, 8, 1, np.zeros((8, 8, 1)), ColorSpace.RAW_0_255)
        with pytest.raises(ValueError, match="unit_0_1"):
            slic_segment(raw, 4)
        img = Image(8, 8, 1, np.zeros((8, 8, 1)), ColorSpace.UNIT_0_1)
        with pytest.raises(ValueError, match="n_segments"):
            slic_segment(img, 1)

    def test_grayscale_images_are_supported(self):
        rng = np.random.Generator(np.random.Philox(key=21))
        data = np.kron(rng.random((4, 4, 1)), np.ones((8, 8, 1)))
        seg = slic_segment(Image(32, 32, 1, data, ColorSpace.UNIT_0_1), 9)
        assert validate(seg) == []
