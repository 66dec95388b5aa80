import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sdmfusion.raster import (LANDCOVER, AugmentationConfig, RasterPatch, augment, decode_patch, dominant_class,
                              dump_band, encode_patch, hflip, ndvi, ndwi, patch_path, read_patch, resize_patch,
                              rotate, sliding_window, write_patch, zoom)

reflectance = arrays(np.float64, (3, 4), elements=st.floats(0.0, 1.0))


def _rgbn(red, green, blue, nir):
    return RasterPatch(("red", "green", "blue", "nir"),
                       np.stack([np.broadcast_to(np.asarray(v, dtype=float), (2, 2)) for v in (red, green, blue, nir)]))


def _lc(classes):
    return RasterPatch((LANDCOVER,), np.asarray(classes, dtype=float)[None])


class TestRasterPatch:
    def test_read_only(self):
        p = _rgbn(0.1, 0.2, 0.3, 0.4)
        with pytest.raises(ValueError):
            p.pixels[0, 0, 0] = 1.0

    def test_band_count_mismatch(self):
        with pytest.raises(ValueError, match="band names"):
            RasterPatch(("a", "b"), np.zeros((1, 2, 2)))

    def test_landcover_must_be_integer_classes(self):
        with pytest.raises(ValueError, match="landcover"):
            _lc([[0.5, 1.0]])
        with pytest.raises(ValueError, match="landcover"):
            _lc([[10.0, 1.0]])

    def test_missing_band(self):
        with pytest.raises(KeyError, match="nir"):
            RasterPatch(("red",), np.zeros((1, 2, 2))).band("nir")


class TestIndices:
    def test_ndvi_hand_value(self):
        np.testing.assert_allclose(ndvi(_rgbn(0.2, 0, 0, 0.8)).band("ndvi"), 0.6, atol=1e-12)

    @pytest.mark.parametrize("nir,red,expected", [(0.4, 0.4, 0.0), (1.0, 0.0, 1.0), (0.0, 0.0, 0.0)])
    def test_ndvi_edge_cases(self, nir, red, expected):
        np.testing.assert_array_equal(ndvi(_rgbn(red, 0, 0, nir)).band("ndvi"), expected)

    def test_ndwi_hand_value(self):
        np.testing.assert_allclose(ndwi(_rgbn(0, 0.6, 0, 0.2)).band("ndwi"), 0.5, atol=1e-12)

    @pytest.mark.parametrize("green,nir,expected", [(0.3, 0.3, 0.0), (0.0, 1.0, -1.0), (0.0, 0.0, 0.0)])
    def test_ndwi_edge_cases(self, green, nir, expected):
        np.testing.assert_array_equal(ndwi(_rgbn(0, green, 0, nir)).band("ndwi"), expected)

    @given(reflectance, reflectance, reflectance)
    def test_range(self, red, green, nir):
        p = RasterPatch(("red", "green", "nir"), np.stack([red, green, nir]))
        for idx in (ndvi(p).pixels, ndwi(p).pixels):
            assert np.all(idx >= -1.0) and np.all(idx <= 1.0)


class TestDominantClass:
    def test_mode(self):
        assert dominant_class(_lc([[3, 3], [1, 2]])) == 3

    def test_tie_goes_to_lowest(self):
        assert dominant_class(_lc([[7, 2], [2, 7]])) == 2


class TestResize:
    def test_same_dims_is_identity(self):
        p = RasterPatch(("x",), np.arange(12.0).reshape(1, 3, 4))
        assert resize_patch(p, 3, 4) == p

    @pytest.mark.parametrize("h,w", [(1, 1), (5, 3), (7, 9)])
    def test_constant_stays_constant(self, h, w):
        p = RasterPatch(("x",), np.full((1, 2, 2), 0.37))
        np.testing.assert_allclose(resize_patch(p, h, w).pixels, 0.37, atol=1e-15)

    def test_bilinear_centre_column(self):
        p = RasterPatch(("x",), np.array([[[0.0, 1.0], [0.0, 1.0]]]))
        out = resize_patch(p, 2, 3).band("x")
        np.testing.assert_allclose(out[:, 1], 0.5, atol=1e-12)
        np.testing.assert_allclose(out[:, 0], 0.0, atol=1e-12)
        np.testing.assert_allclose(out[:, 2], 1.0, atol=1e-12)

    def test_landcover_is_nearest(self):
        rng = np.random.default_rng(2)
        p = _lc(rng.integers(0, 10, (5, 5)))
        for h, w in [(3, 3), (8, 11), (2, 7)]:
            out = resize_patch(p, h, w).band(LANDCOVER)
            assert set(np.unique(out)) <= set(np.unique(p.band(LANDCOVER)))

    def test_upsample_by_two_repeats_landcover(self):
        p = _lc([[1, 2], [3, 4]])
        np.testing.assert_array_equal(resize_patch(p, 4, 4).band(LANDCOVER),
                                      np.kron([[1, 2], [3, 4]], np.ones((2, 2))))

    def test_bad_target(self):
        with pytest.raises(ValueError):
            resize_patch(_lc([[1]]), 0, 2)


class TestSlidingWindow:
    p4 = RasterPatch(("x",), np.arange(16.0).reshape(1, 4, 4))

    def test_four_windows_stride_two(self):
        wins = sliding_window(self.p4, 2, 2, 2)
        assert len(wins) == 4
        np.testing.assert_array_equal(wins[1].band("x"), [[2, 3], [6, 7]])

    def test_full_window(self):
        assert sliding_window(self.p4, 4, 4, 1) == [self.p4]

    def test_stride_one_on_three_by_three(self):
        p = RasterPatch(("x",), np.arange(9.0).reshape(1, 3, 3))
        assert len(sliding_window(p, 2, 2, 1)) == 4

    @given(st.integers(1, 9), st.integers(1, 9), st.integers(1, 4), st.integers(1, 4), st.integers(1, 3))
    def test_count_formula(self, h, w, wh, ww, stride):
        p = RasterPatch(("x",), np.zeros((1, h, w)))
        if wh > h or ww > w:
            with pytest.raises(ValueError):
                sliding_window(p, wh, ww, stride)
            return
        assert len(sliding_window(p, wh, ww, stride)) == ((h - wh) // stride + 1) * ((w - ww) // stride + 1)


class TestAugment:
    rng = np.random.default_rng(0)
    patch = RasterPatch(("red", LANDCOVER), np.stack([rng.random((6, 6)), rng.integers(0, 10, (6, 6))]))

    def test_forced_flip_is_mirror(self):
        cfg = AugmentationConfig(hflip_prob=1.0, rotation_deg=(0, 0), scale=(1, 1), resize_targets=((6, 6),))
        out = augment(self.patch, cfg)
        np.testing.assert_array_equal(out.pixels, self.patch.pixels[:, :, ::-1])
        assert augment(out, cfg) == self.patch

    def test_degenerate_is_identity(self):
        cfg = AugmentationConfig(hflip_prob=0.0, rotation_deg=(0, 0), scale=(1, 1), resize_targets=((6, 6),))
        assert augment(self.patch, cfg) == self.patch

    def test_seeded(self):
        cfg = AugmentationConfig(seed=4, resize_targets=((5, 5), (8, 8)))
        assert augment(self.patch, cfg) == augment(self.patch, cfg)

    def test_landcover_stays_integer(self):
        cfg = AugmentationConfig(resize_targets=((5, 7),))
        rng = np.random.default_rng(9)
        for _ in range(10):
            lc = augment(self.patch, cfg, rng).band(LANDCOVER)
            np.testing.assert_array_equal(lc, np.round(lc))

    def test_rotate_90_matches_rot90(self):
        p = RasterPatch(("x",), np.arange(16.0).reshape(1, 4, 4))
        np.testing.assert_allclose(rotate(p, 90).pixels, np.rot90(p.pixels, 1, axes=(1, 2)), atol=1e-9)

    def test_zoom_one_and_flip_twice(self):
        assert zoom(self.patch, 1.0) == self.patch
        assert hflip(hflip(self.patch)) == self.patch

    def test_bad_config(self):
        with pytest.raises(ValueError):
            AugmentationConfig(hflip_prob=2.0)
        with pytest.raises(ValueError):
            AugmentationConfig(scale=(0.0, 1.0))


class TestPatchFiles:
    def test_layout(self):
        p = RasterPatch(("red", "nir"), np.arange(6.0).reshape(2, 1, 3))
        data = encode_patch(p)
        assert data[:4] == b"ASDM"
        assert struct.unpack_from("<HHH", data, 4) == (2, 1, 3)
        assert data[10:26] == b"red".ljust(16, b"\0")
        np.testing.assert_array_equal(np.frombuffer(data, "<f4", 3, 26), [0, 1, 2])
        assert len(data) == 10 + 2 * (16 + 12)

    def test_round_trip(self, tmp_path):
        p = RasterPatch(("red", LANDCOVER), np.stack([np.full((3, 2), 0.25), np.full((3, 2), 4.0)]))
        path = patch_path(tmp_path, 3, 12, "RGB")
        assert path.name == "r0003_c0012_rgb.asdm"
        write_patch(p, path)
        assert read_patch(path) == p

    @given(arrays(np.float32, st.tuples(st.integers(1, 3), st.integers(1, 5), st.integers(1, 5)),
                  elements=st.floats(-1e6, 1e6, width=32)))
    def test_float32_values_survive(self, px):
        names = tuple(f"b{i}" for i in range(px.shape[0]))
        p = RasterPatch(names, px.astype(np.float64))
        assert decode_patch(encode_patch(p)) == p

    def test_corrupt(self):
        data = encode_patch(RasterPatch(("x",), np.zeros((1, 2, 2))))
        with pytest.raises(ValueError, match="magic"):
            decode_patch(b"XXXX" + data[4:])
        with pytest.raises(ValueError, match="truncated"):
            decode_patch(data[:-1])
        with pytest.raises(ValueError, match="trailing"):
            decode_patch(data + b"\0")

    def test_long_band_name(self):
        with pytest.raises(ValueError, match="longer"):
            encode_patch(RasterPatch(("x" * 17,), np.zeros((1, 1, 1))))

    def test_dump_band(self):
        p = RasterPatch(("x",), np.array([[[1.0, 2.5], [3.0, 4.0]]]))
        assert dump_band(p, "x") == "1 2.5\n3 4\n"
