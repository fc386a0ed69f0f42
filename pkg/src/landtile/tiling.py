"""Overlapped tile geometry with mirror padding and center-crop windows.

A plan over a W x H source cuts ceil(W/S) x ceil(H/S) tiles of T x T
pixels at stride S from a virtually padded image whose margin is
P = (T - S) / 2 on every side. Tile (i, j) covers
[j*S - P, j*S - P + T) x [i*S - P, i*S - P + T) in source coordinates;
its center window [j*S, min((j+1)*S, W)) x [i*S, min((i+1)*S, H)) starts
at tile-local offset (P, P). Center windows are pairwise disjoint and
cover the source exactly, which is what makes stitched output
order-independent and seam-free. The no-overlap ablation is the same
code path with S = T, P = 0.

Out-of-extent samples are filled by reflection about the edge without
repeating the edge pixel (index -1 maps to 0, -2 to 1, ...); where the
source is too small for one reflection to land inside, the remainder
clamps to the nearest edge sample.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .raster import ClassMap, RasterGrid, Window, translate_geotransform
from .spectral import ChannelStack

PAD_MODES = ("mirror", "zero", "replicate")


@dataclass(frozen=True)
class TileSpec:
    """Tile geometry: size T, stride S, pad P = (T - S) / 2."""

    tile: int = 640
    stride: int = 320
    pad_mode: str = "mirror"

    def __post_init__(self):
        if self.tile < 1:
            raise ValidationError(f"tile size must be >= 1, got {self.tile}")
        if not 1 <= self.stride <= self.tile:
            raise ValidationError(
                f"stride must be in [1, tile], got {self.stride}")
        if (self.tile - self.stride) % 2:
            raise ValidationError(
                f"tile - stride must be even, got {self.tile - self.stride}")
        if self.pad_mode not in PAD_MODES:
            raise ValidationError(f"pad_mode must be one of {PAD_MODES}")

    @property
    def pad(self):
        return (self.tile - self.stride) // 2


NO_OVERLAP = TileSpec(tile=640, stride=640)


@dataclass(frozen=True)
class TilePlan:
    """Deterministic tile layout over one source extent."""

    spec: TileSpec
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValidationError(
                f"source extent must be positive, got "
                f"{self.width}x{self.height}")

    @property
    def tiles_x(self):
        return -(-self.width // self.spec.stride)

    @property
    def tiles_y(self):
        return -(-self.height // self.spec.stride)

    @property
    def n_tiles(self):
        return self.tiles_x * self.tiles_y

    @property
    def padded_w(self):
        return self.tiles_x * self.spec.stride + (self.spec.tile - self.spec.stride)

    @property
    def padded_h(self):
        return self.tiles_y * self.spec.stride + (self.spec.tile - self.spec.stride)

    def tile_ij(self, k):
        """Row-major tile index k -> (row i, column j)."""
        if not 0 <= k < self.n_tiles:
            raise ValidationError(
                f"tile index {k} out of range [0, {self.n_tiles})")
        return divmod(k, self.tiles_x)

    def source_window(self, k) -> Window:
        """T x T tile extent in source coordinates; may leave the extent."""
        i, j = self.tile_ij(k)
        t, p = self.spec.tile, self.spec.pad
        return Window(j * self.spec.stride - p, i * self.spec.stride - p, t, t)

    def center_window(self, k) -> Window:
        """Output region of tile k in source coordinates, clipped."""
        i, j = self.tile_ij(k)
        s = self.spec.stride
        x0, y0 = j * s, i * s
        return Window(x0, y0,
                      min((j + 1) * s, self.width) - x0,
                      min((i + 1) * s, self.height) - y0)

    def center_in_tile(self, k) -> Window:
        """Same region in tile-local coordinates: starts at (pad, pad)."""
        c = self.center_window(k)
        return Window(self.spec.pad, self.spec.pad, c.w, c.h)

    def to_json(self):
        return json.dumps({
            "tile": self.spec.tile,
            "stride": self.spec.stride,
            "pad": self.spec.pad,
            "pad_mode": self.spec.pad_mode,
            "width": self.width,
            "height": self.height,
            "tiles_x": self.tiles_x,
            "tiles_y": self.tiles_y,
            "n_tiles": self.n_tiles,
            "padded_w": self.padded_w,
            "padded_h": self.padded_h,
        }, indent=2)


def plan_tiles(width, height, spec: TileSpec = TileSpec()) -> TilePlan:
    return TilePlan(spec=spec, width=width, height=height)


def pad_indices(start, size, n, mode):
    """Source indices for tile axis range [start, start+size).

    Returns (idx, valid): idx are in-range source indices after one
    reflection and an edge clamp; valid marks positions inside the
    original extent (all True except in zero mode usage).
    """
    idx = np.arange(start, start + size, dtype=np.int64)
    valid = (idx >= 0) & (idx < n)
    if mode == "zero":
        return np.clip(idx, 0, n - 1), valid
    if mode == "mirror":
        idx = np.where(idx < 0, -1 - idx, idx)
        idx = np.where(idx >= n, 2 * n - 1 - idx, idx)
    return np.clip(idx, 0, n - 1), np.ones_like(valid)


def _extract_plane_indices(plan: TilePlan, k):
    win = plan.source_window(k)
    mode = plan.spec.pad_mode
    xi, xv = pad_indices(win.x0, win.w, plan.width, mode)
    yi, yv = pad_indices(win.y0, win.h, plan.height, mode)
    return yi, xi, yv, xv


def extract_array(data: np.ndarray, plan: TilePlan, k) -> np.ndarray:
    """Cut tile k from an (..., H, W) array, applying the pad fill."""
    if data.shape[-2:] != (plan.height, plan.width):
        raise ValidationError(
            f"array extent {data.shape[-2:]} does not match plan "
            f"{(plan.height, plan.width)}")
    yi, xi, yv, xv = _extract_plane_indices(plan, k)
    tile = data[..., yi[:, None], xi[None, :]]
    if plan.spec.pad_mode == "zero":
        tile = tile.copy()
        tile[..., ~yv, :] = 0
        tile[..., :, ~xv] = 0
    return np.ascontiguousarray(tile)


def read_tile_array(reader, plan: TilePlan, k) -> np.ndarray:
    """Windowed equivalent of extract_array against an open RasterReader.

    Reads only the index range the tile actually references, so memory
    stays proportional to the tile, not the source.
    """
    if (reader.width, reader.height) != (plan.width, plan.height):
        raise ValidationError(
            f"reader extent {reader.width}x{reader.height} does not match "
            f"plan {plan.width}x{plan.height}")
    yi, xi, yv, xv = _extract_plane_indices(plan, k)
    x0, x1 = int(xi.min()), int(xi.max()) + 1
    y0, y1 = int(yi.min()), int(yi.max()) + 1
    sub = reader.read_window(Window(x0, y0, x1 - x0, y1 - y0))
    tile = sub.data[:, (yi - y0)[:, None], (xi - x0)[None, :]]
    if plan.spec.pad_mode == "zero":
        tile[:, ~yv, :] = 0
        tile[:, :, ~xv] = 0
    return np.ascontiguousarray(tile)


def extract_tile(source, plan: TilePlan, k):
    """Cut tile k from a ChannelStack, ClassMap, or RasterGrid.

    Returns the same type with a T x T extent; grid-bearing types get a
    geotransform translated to the tile origin (which may sit in the
    virtual padding).
    """
    win = plan.source_window(k)
    if isinstance(source, ChannelStack):
        return ChannelStack(
            channels=extract_array(source.channels, plan, k),
            names=list(source.names), width=win.w, height=win.h,
            norm=source.norm,
            mask=(extract_array(source.mask, plan, k)
                  if source.mask is not None else None))
    if isinstance(source, ClassMap):
        return ClassMap(
            width=win.w, height=win.h,
            labels=extract_array(source.labels, plan, k),
            geotransform=translate_geotransform(
                source.geotransform, win.x0, win.y0),
            scheme=source.scheme)
    if isinstance(source, RasterGrid):
        return RasterGrid(
            width=win.w, height=win.h, bands=source.bands,
            dtype=source.dtype, data=extract_array(source.data, plan, k),
            nodata=source.nodata,
            geotransform=translate_geotransform(
                source.geotransform, win.x0, win.y0),
            band_names=list(source.band_names))
    raise ValidationError(f"cannot extract tiles from {type(source).__name__}")


def keep_tile(labels_tile: np.ndarray, min_labeled_frac: float,
              ignore=255) -> bool:
    """Training-slice filter: keep tiles with enough labeled pixels."""
    if min_labeled_frac <= 0:
        return True
    frac = float((labels_tile != ignore).mean())
    return frac >= min_labeled_frac
