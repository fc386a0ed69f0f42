"""Tile geometry tests.

Oracles: brute-force pixel marking for the partition property, a numbered
reference grid for reflection indices, and numpy-only re-implementations
for extraction.
"""

import numpy as np
import pytest

from landtile.errors import ValidationError
from landtile.raster import ClassMap, RasterGrid, RasterReader, Window, write_raster
from landtile.spectral import ChannelStack
from landtile.tiling import (
    NO_OVERLAP, TilePlan, TileSpec, extract_array, extract_tile, keep_tile,
    pad_indices, plan_tiles, read_tile_array,
)


def mark_centers(plan):
    """Brute-force oracle: add 1 over every center window."""
    hits = np.zeros((plan.height, plan.width), np.int32)
    for k in range(plan.n_tiles):
        c = plan.center_window(k)
        hits[c.y0:c.y0 + c.h, c.x0:c.x0 + c.w] += 1
    return hits


def test_spec_validation():
    TileSpec(tile=640, stride=320)
    with pytest.raises(ValidationError):
        TileSpec(tile=640, stride=321)  # odd difference
    with pytest.raises(ValidationError):
        TileSpec(tile=640, stride=641)  # stride > tile
    with pytest.raises(ValidationError):
        TileSpec(tile=0, stride=0)
    with pytest.raises(ValidationError):
        TileSpec(pad_mode="wrap")
    assert TileSpec().pad == 160
    assert NO_OVERLAP.pad == 0


def test_single_tile_plan_320():
    plan = plan_tiles(320, 320)
    assert (plan.tiles_x, plan.tiles_y) == (1, 1)
    assert (plan.padded_w, plan.padded_h) == (640, 640)
    src = plan.source_window(0)
    assert (src.x0, src.y0, src.w, src.h) == (-160, -160, 640, 640)
    assert plan.center_window(0) == Window(0, 0, 320, 320)
    assert plan.center_in_tile(0) == Window(160, 160, 320, 320)


def test_plan_1000x800():
    plan = plan_tiles(1000, 800)
    assert (plan.tiles_x, plan.tiles_y) == (4, 3)
    assert (plan.padded_w, plan.padded_h) == (1600, 1280)
    # rightmost column j=3: x-range [960, 1000), width 40 after clipping
    k = plan.tiles_x - 1
    c = plan.center_window(k)
    assert (c.x0, c.w) == (960, 40)
    assert (mark_centers(plan) == 1).all()


def test_plan_acquisition_scale_scene():
    plan = plan_tiles(15200, 10200)
    assert (plan.tiles_x, plan.tiles_y) == (48, 32)
    assert plan.n_tiles == 1536


def test_partition_property_200_random_plans():
    rng = np.random.default_rng(30)
    for _ in range(200):
        t2 = int(rng.integers(1, 33))
        s2 = int(rng.integers(1, t2 + 1))
        spec = TileSpec(tile=2 * t2, stride=2 * s2)
        w = int(rng.integers(1, 200))
        h = int(rng.integers(1, 200))
        plan = plan_tiles(w, h, spec)
        hits = mark_centers(plan)
        assert (hits == 1).all(), (w, h, spec)


def test_partition_property_larger_extents():
    rng = np.random.default_rng(31)
    for _ in range(10):
        w = int(rng.integers(1, 2049))
        h = int(rng.integers(1, 2049))
        plan = plan_tiles(w, h)
        assert (mark_centers(plan) == 1).all(), (w, h)


def test_tile_index_round_trip():
    plan = plan_tiles(1000, 800)
    seen = set()
    for k in range(plan.n_tiles):
        i, j = plan.tile_ij(k)
        assert 0 <= i < plan.tiles_y and 0 <= j < plan.tiles_x
        assert k == i * plan.tiles_x + j
        seen.add((i, j))
    assert len(seen) == plan.n_tiles
    with pytest.raises(ValidationError):
        plan.tile_ij(plan.n_tiles)
    with pytest.raises(ValidationError):
        plan.tile_ij(-1)


def test_plan_determinism_and_json():
    a, b = plan_tiles(777, 555), plan_tiles(777, 555)
    assert a == b
    assert a.to_json() == b.to_json()
    assert '"n_tiles"' in a.to_json()


def test_pad_indices_mirror_reflection():
    # half-sample symmetry: -1 -> 0, -2 -> 1; n -> n-1, n+1 -> n-2
    idx, valid = pad_indices(-3, 6, 10, "mirror")
    assert idx.tolist() == [2, 1, 0, 0, 1, 2]
    assert valid.all()
    idx, _ = pad_indices(7, 6, 10, "mirror")
    assert idx.tolist() == [7, 8, 9, 9, 8, 7]


def test_pad_indices_replicate_and_zero():
    idx, valid = pad_indices(-2, 5, 10, "replicate")
    assert idx.tolist() == [0, 0, 0, 1, 2]
    assert valid.all()
    idx, valid = pad_indices(-2, 5, 10, "zero")
    assert valid.tolist() == [False, False, True, True, True]
    assert idx[2:].tolist() == [0, 1, 2]


def test_pad_indices_tiny_source_clamps():
    # one reflection is not enough for n=1: remainder replicates the edge
    idx, _ = pad_indices(-5, 11, 1, "mirror")
    assert (idx == 0).all()
    idx, _ = pad_indices(-4, 10, 2, "mirror")
    assert set(idx.tolist()) <= {0, 1}
    assert idx[3] == 0 and idx[4] == 0 and idx[5] == 1  # [-1,0,1] -> [0,0,1]


def test_extract_interior_tile_equals_direct_crop():
    rng = np.random.default_rng(32)
    spec = TileSpec(tile=8, stride=4)
    plan = plan_tiles(20, 16, spec)
    data = rng.integers(0, 255, size=(3, 16, 20), dtype=np.uint8)
    # tile (i=1, j=1) extent [2,10)x[2,10): fully interior
    k = 1 * plan.tiles_x + 1
    tile = extract_array(data, plan, k)
    assert np.array_equal(tile, data[:, 2:10, 2:10])


def test_extract_top_left_reflection_rows():
    # numbered 5x5 grid: row -1 equals row 0, row -2 equals row 1
    vals = np.arange(25, dtype=np.int32).reshape(5, 5)
    spec = TileSpec(tile=6, stride=2)
    plan = plan_tiles(5, 5, spec)
    tile = extract_array(vals, plan, 0)  # origin (-2, -2)
    assert np.array_equal(tile[2:, 2:], vals[:4, :4])
    assert np.array_equal(tile[1, 2:], vals[0, :4])  # row -1 == row 0
    assert np.array_equal(tile[0, 2:], vals[1, :4])  # row -2 == row 1
    assert np.array_equal(tile[2:, 1], vals[:4, 0])
    assert np.array_equal(tile[2:, 0], vals[:4, 1])
    assert tile[0, 0] == vals[1, 1]  # corner reflects both axes


def test_extract_1x1_source_constant_tile():
    plan = plan_tiles(1, 1, TileSpec(tile=640, stride=320))
    tile = extract_array(np.array([[42]], np.uint8), plan, 0)
    assert tile.shape == (640, 640)
    assert (tile == 42).all()


def test_extract_zero_mode_fills_zero():
    vals = np.full((4, 4), 9, np.uint8)
    plan = plan_tiles(4, 4, TileSpec(tile=8, stride=4, pad_mode="zero"))
    tile = extract_array(vals, plan, 0)
    assert (tile[2:6, 2:6] == 9).all()
    assert tile[0, 0] == 0 and tile[7, 7] == 0 and tile[0, 5] == 0
    assert int((tile == 9).sum()) == 16


def test_extract_replicate_mode():
    vals = np.arange(9, dtype=np.int32).reshape(3, 3)
    plan = plan_tiles(3, 3, TileSpec(tile=5, stride=1, pad_mode="replicate"))
    tile = extract_array(vals, plan, 0)  # origin (-2, -2)
    assert tile[0, 0] == vals[0, 0]
    assert tile[1, 1] == vals[0, 0]


def test_extract_reflection_never_enters_center():
    # mirror fill stays outside center crops when source >= stride wide
    rng = np.random.default_rng(33)
    for w, h in ((320, 320), (321, 480), (500, 337)):
        data = rng.integers(0, 9, size=(h, w), dtype=np.uint8)
        plan = plan_tiles(w, h)
        out = np.full((h, w), 255, np.uint8)
        for k in range(plan.n_tiles):
            tile = extract_array(data, plan, k)
            c = plan.center_window(k)
            ct = plan.center_in_tile(k)
            out[c.y0:c.y0 + c.h, c.x0:c.x0 + c.w] = \
                tile[ct.y0:ct.y0 + ct.h, ct.x0:ct.x0 + ct.w]
        assert np.array_equal(out, data), (w, h)


def test_extract_tile_class_map_and_stack_types():
    rng = np.random.default_rng(34)
    labels = rng.integers(0, 9, size=(10, 12), dtype=np.uint8)
    cmap = ClassMap(width=12, height=10, labels=labels)
    spec = TileSpec(tile=6, stride=4)
    plan = plan_tiles(12, 10, spec)
    tcm = extract_tile(cmap, plan, 0)
    assert isinstance(tcm, ClassMap)
    assert tcm.width == tcm.height == 6
    assert np.array_equal(tcm.labels, extract_array(labels, plan, 0))
    # tile origin (-1,-1) shifts the geotransform one pixel up-left
    assert tcm.geotransform[0] == cmap.geotransform[0] - cmap.geotransform[1]

    chans = rng.standard_normal((3, 10, 12)).astype(np.float32)
    stack = ChannelStack(channels=chans, names=["B", "G", "R"],
                         width=12, height=10)
    ts = extract_tile(stack, plan, 3)
    assert isinstance(ts, ChannelStack)
    assert ts.names == ["B", "G", "R"]
    assert np.array_equal(ts.channels, extract_array(chans, plan, 3))

    grid = RasterGrid(width=12, height=10, bands=2, dtype="u16",
                      data=rng.integers(0, 100, (2, 10, 12), dtype=np.uint16))
    tg = extract_tile(grid, plan, 5)
    assert isinstance(tg, RasterGrid)
    assert np.array_equal(tg.data, extract_array(grid.data, plan, 5))

    with pytest.raises(ValidationError):
        extract_tile([1, 2, 3], plan, 0)


def test_extract_shape_mismatch_rejected():
    plan = plan_tiles(8, 8, TileSpec(tile=4, stride=4))
    with pytest.raises(ValidationError):
        extract_array(np.zeros((7, 8)), plan, 0)


def test_read_tile_array_matches_in_memory(tmp_path):
    rng = np.random.default_rng(35)
    data = rng.integers(0, 1024, size=(4, 90, 70), dtype=np.uint16)
    grid = RasterGrid(width=70, height=90, bands=4, dtype="u16", data=data)
    path = tmp_path / "scene.rstr"
    write_raster(grid, path)
    for spec in (TileSpec(tile=32, stride=16), TileSpec(tile=32, stride=32),
                 TileSpec(tile=64, stride=16, pad_mode="zero")):
        plan = plan_tiles(70, 90, spec)
        with RasterReader(path) as reader:
            for k in range(plan.n_tiles):
                want = extract_array(data, plan, k)
                got = read_tile_array(reader, plan, k)
                assert np.array_equal(got, want), (spec, k)


def test_read_tile_array_extent_mismatch(tmp_path):
    grid = RasterGrid(width=4, height=4, bands=1, dtype="u8",
                      data=np.zeros((1, 4, 4), np.uint8))
    path = tmp_path / "s.rstr"
    write_raster(grid, path)
    plan = plan_tiles(5, 4, TileSpec(tile=2, stride=2))
    with RasterReader(path) as reader:
        with pytest.raises(ValidationError):
            read_tile_array(reader, plan, 0)


def test_no_overlap_spec_same_code_path():
    rng = np.random.default_rng(36)
    data = rng.integers(0, 9, size=(100, 130), dtype=np.uint8)
    plan = plan_tiles(130, 100, TileSpec(tile=64, stride=64))
    assert plan.spec.pad == 0
    hits = mark_centers(plan)
    assert (hits == 1).all()
    # tile 0 is a direct crop: no padding on a leading tile when P=0
    assert np.array_equal(extract_array(data, plan, 0), data[:64, :64])


def test_keep_tile_predicate():
    labels = np.full((10, 10), 255, np.uint8)
    assert keep_tile(labels, 0.0)
    assert not keep_tile(labels, 0.01)
    labels[:5] = 3
    assert keep_tile(labels, 0.5)
    assert not keep_tile(labels, 0.51)
