"""Index math and channel stack tests.

Oracles: direct arithmetic for normalized differences, sort-based ranks
for percentiles, and independent recomputation for stack planes.
"""

import numpy as np
import pytest

from landtile.errors import ValidationError
from landtile.raster import RasterGrid
from landtile.spectral import (
    MODES, RAW_BANDS, ChannelStack, NormStats, build_channel_stack,
    compute_norm_stats, normalized_difference, pool_norm_stats,
)


def raw_grid(data, nodata=None):
    bands, h, w = data.shape
    return RasterGrid(width=w, height=h, bands=bands, dtype="u16",
                      data=data.astype(np.uint16), nodata=nodata,
                      band_names=list(RAW_BANDS))


def test_nd_equal_inputs_zero():
    a = np.full((4, 5), 3.7, np.float32)
    assert (normalized_difference(a, a.copy()) == 0).all()


def test_nd_direct_arithmetic():
    a = np.array([[0.6]], np.float32)
    b = np.array([[0.2]], np.float32)
    out = normalized_difference(a, b)
    assert out[0, 0] == pytest.approx(0.5, abs=1e-7)


def test_nd_degenerate_denominator_zero():
    z = np.zeros((2, 2), np.float32)
    assert (normalized_difference(z, z) == 0).all()
    # mixed plane: only the degenerate pixel collapses to 0
    a = np.array([[0.0, 0.5]], np.float32)
    b = np.array([[0.0, 0.1]], np.float32)
    out = normalized_difference(a, b)
    assert out[0, 0] == 0
    assert out[0, 1] == pytest.approx(4 / 6, abs=1e-6)


def test_nd_antisymmetry_random_planes():
    rng = np.random.default_rng(20)
    for _ in range(20):
        a = rng.random((13, 9)).astype(np.float32)
        b = rng.random((13, 9)).astype(np.float32)
        assert np.array_equal(normalized_difference(a, b),
                              -normalized_difference(b, a))


def test_nd_scale_invariance():
    rng = np.random.default_rng(21)
    a = (rng.random((16, 16)) + 0.01).astype(np.float32)
    b = (rng.random((16, 16)) + 0.01).astype(np.float32)
    base = normalized_difference(a, b)
    for c in (2.0, 37.5, 1e-3, 1e4):
        scaled = normalized_difference(a * c, b * c)
        assert np.allclose(scaled, base, atol=1e-6)


def test_nd_range_for_nonnegative_inputs():
    rng = np.random.default_rng(22)
    for _ in range(20):
        a = (rng.random((8, 8)) * 1000).astype(np.float32)
        b = (rng.random((8, 8)) * 1000).astype(np.float32)
        out = normalized_difference(a, b)
        assert (out >= -1).all() and (out <= 1).all()


def test_nd_shape_mismatch_rejected():
    with pytest.raises(ValidationError):
        normalized_difference(np.zeros((2, 2)), np.zeros((2, 3)))


def test_nd_eps_must_be_positive():
    with pytest.raises(ValidationError):
        normalized_difference(np.zeros((1, 1)), np.zeros((1, 1)), eps=0)


def test_norm_stats_constant_band_widened():
    data = np.full((4, 3, 3), 5, np.uint16)
    stats = compute_norm_stats(raw_grid(data))
    assert stats.low == (5.0,) * 4
    assert stats.high == (6.0,) * 4


def test_norm_stats_uniform_ramp_nearest_rank():
    data = np.tile(np.arange(100, dtype=np.uint16).reshape(1, 10, 10), (4, 1, 1))
    stats = compute_norm_stats(raw_grid(data))
    for lo, hi in zip(stats.low, stats.high):
        assert abs(lo - 2) <= 1
        assert abs(hi - 98) <= 1
    # nearest-rank oracle: value from the sorted array, no interpolation
    vals = np.sort(data[0].ravel())
    assert stats.low[0] in vals
    assert float(stats.low[0]).is_integer()


def test_norm_stats_excludes_nodata():
    data = np.zeros((4, 2, 50), np.uint16)
    data[:, :, 25:] = 100
    stats = compute_norm_stats(raw_grid(data, nodata=0))
    assert stats.low == (100.0,) * 4  # zeros are nodata, not samples


def test_norm_stats_all_nodata_band_rejected():
    data = np.zeros((4, 2, 2), np.uint16)
    with pytest.raises(ValidationError):
        compute_norm_stats(raw_grid(data, nodata=0))


def test_norm_stats_validation_and_json():
    with pytest.raises(ValidationError):
        NormStats(bands=("B",), low=(2.0,), high=(2.0,))
    stats = NormStats(bands=tuple(RAW_BANDS), low=(0.0, 1.0, 2.0, 3.0),
                      high=(10.0, 11.0, 12.0, 13.0))
    assert NormStats.from_json(stats.to_json()) == stats


def test_pool_norm_stats_envelope():
    a = NormStats(bands=("B", "G"), low=(5.0, 0.0), high=(10.0, 8.0))
    b = NormStats(bands=("B", "G"), low=(3.0, 2.0), high=(9.0, 12.0))
    pooled = pool_norm_stats([a, b])
    assert pooled.low == (3.0, 0.0)
    assert pooled.high == (10.0, 12.0)
    with pytest.raises(ValidationError):
        pool_norm_stats([a, NormStats(bands=("B",), low=(0,), high=(1,))])
    with pytest.raises(ValidationError):
        pool_norm_stats([])


def test_stack_lu3_names_and_count():
    rng = np.random.default_rng(23)
    data = rng.integers(0, 1024, size=(4, 6, 7), dtype=np.uint16)
    stack = build_channel_stack(raw_grid(data), "LU3")
    assert stack.names == ["B", "G", "R"]
    assert stack.channels.shape == (3, 6, 7)
    assert stack.channels.dtype == np.float32


def test_stack_lu6_planes_match_independent_recompute():
    rng = np.random.default_rng(24)
    data = rng.integers(0, 1024, size=(4, 12, 9), dtype=np.uint16)
    grid = raw_grid(data)
    stats = compute_norm_stats(grid)
    stack = build_channel_stack(grid, "LU6", stats)
    assert stack.names == MODES["LU6"]
    raw = data.astype(np.float32)
    ndvi = normalized_difference(raw[3], raw[2])
    ndwi = normalized_difference(raw[1], raw[3])
    assert np.array_equal(stack.channels[4], ndvi)
    assert np.array_equal(stack.channels[5], ndwi)
    for i in range(4):
        lo, hi = stats.low[i], stats.high[i]
        want = np.clip((raw[i] - np.float32(lo)) / np.float32(hi - lo), 0, 1)
        assert np.allclose(stack.channels[i], want, atol=1e-7)
        assert stack.channels[i].min() >= 0 and stack.channels[i].max() <= 1


def test_stack_uniform_grid_indices_zero():
    data = np.full((4, 5, 5), 700, np.uint16)
    stack = build_channel_stack(raw_grid(data), "LU6")
    assert (stack.channels[4] == 0).all()
    assert (stack.channels[5] == 0).all()


def test_stack_indices_use_raw_not_normalized_values():
    # Normalization changes band ratios; NDVI must come from raw samples.
    data = np.zeros((4, 1, 1), np.uint16)
    data[2] = 200   # R
    data[3] = 600   # NIR
    data[0] = 100
    data[1] = 100
    stats = NormStats(bands=tuple(RAW_BANDS), low=(0.0,) * 4,
                      high=(1000.0, 1000.0, 100.0, 300.0))
    stack = build_channel_stack(raw_grid(data), "LU6", stats)
    assert stack.channels[4][0, 0] == pytest.approx(0.5, abs=1e-6)


def test_stack_wrong_bands_rejected():
    data = np.zeros((3, 2, 2), np.uint16)
    grid = RasterGrid(width=2, height=2, bands=3, dtype="u16", data=data,
                      band_names=["X", "Y", "Z"])
    with pytest.raises(ValidationError):
        build_channel_stack(grid, "LU3")
    with pytest.raises(ValidationError):
        build_channel_stack(raw_grid(np.zeros((4, 2, 2))), "LU9")


def test_stack_prepared_grid_passes_through():
    rng = np.random.default_rng(25)
    planes = rng.standard_normal((6, 4, 4)).astype(np.float32)
    grid = RasterGrid(width=4, height=4, bands=6, dtype="f32", data=planes,
                      band_names=MODES["LU6"])
    stack = build_channel_stack(grid, "LU6")
    assert np.array_equal(stack.channels, planes)
    assert stack.norm is None


def test_stack_nodata_mask():
    data = np.full((4, 2, 3), 50, np.uint16)
    data[1, 1, 2] = 0  # nodata poisons the pixel across all channels
    stack = build_channel_stack(raw_grid(data, nodata=0), "LU6")
    assert stack.mask is not None
    assert stack.mask[1, 2]
    assert stack.mask.sum() == 1
    clean = build_channel_stack(raw_grid(data), "LU6")
    assert clean.mask is None


def test_channel_stack_validation():
    with pytest.raises(ValidationError):
        ChannelStack(channels=np.zeros((2, 2, 2), np.float32),
                     names=["B", "G"], width=2, height=2)
    with pytest.raises(ValidationError):
        ChannelStack(channels=np.zeros((3, 2, 2), np.float32),
                     names=["B", "G", "R"], width=3, height=2)
