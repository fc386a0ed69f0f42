"""Normalized-difference indices and classifier input stacks.

Index planes are ratios of raw sensor values, so they are computed before
any normalization; the raw bands are then rescaled to [0,1] against
percentile reference values. Channel order is a fixed public contract:
3-channel mode is [B, G, R], 6-channel mode is [B, G, R, NIR, NDVI, NDWI].
"""

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .raster import RasterGrid

RAW_BANDS = ["B", "G", "R", "NIR"]

MODES = {
    "LU3": ["B", "G", "R"],
    "LU6": ["B", "G", "R", "NIR", "NDVI", "NDWI"],
}


@dataclass(frozen=True)
class NormStats:
    """Per-band low/high reference values used for [0,1] rescaling."""

    bands: tuple  # band names, matches RAW_BANDS order
    low: tuple    # float per band
    high: tuple

    def __post_init__(self):
        if not (len(self.bands) == len(self.low) == len(self.high)):
            raise ValidationError("norm stats fields must have equal length")
        for name, lo, hi in zip(self.bands, self.low, self.high):
            if not hi > lo:
                raise ValidationError(
                    f"band {name}: high {hi} must exceed low {lo}")

    def to_json(self):
        return {"bands": list(self.bands),
                "low": [float(v) for v in self.low],
                "high": [float(v) for v in self.high]}

    @classmethod
    def from_json(cls, obj):
        return cls(bands=tuple(obj["bands"]),
                   low=tuple(float(v) for v in obj["low"]),
                   high=tuple(float(v) for v in obj["high"]))


@dataclass
class ChannelStack:
    """Float32 classifier input planes with their channel names.

    mask, when present, is True at pixels poisoned by nodata in any
    source band.
    """

    channels: np.ndarray  # (C, H, W) float32
    names: list
    width: int
    height: int
    norm: NormStats | None = None
    mask: np.ndarray | None = None

    def __post_init__(self):
        if list(self.names) not in MODES.values():
            raise ValidationError(f"unsupported channel order {self.names}")
        expect = (len(self.names), self.height, self.width)
        if self.channels.shape != expect:
            raise ValidationError(
                f"channel data shape {self.channels.shape} != {expect}")
        self.channels = np.ascontiguousarray(self.channels, dtype=np.float32)


def normalized_difference(a, b, eps=1e-12):
    """(a - b) / (a + b), defined as 0 where |a + b| <= eps."""
    if eps <= 0:
        raise ValidationError(f"eps must be positive, got {eps}")
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    if a.shape != b.shape:
        raise ValidationError(f"plane shapes differ: {a.shape} vs {b.shape}")
    num = a - b
    den = a + b
    ok = np.abs(den) > eps
    out = np.zeros(a.shape, dtype=np.float32)
    np.divide(num, den, out=out, where=ok)
    return out


def compute_norm_stats(grid: RasterGrid, low_pct=2.0, high_pct=98.0) -> NormStats:
    """Percentile reference values per band, ignoring nodata samples."""
    if not 0 <= low_pct < high_pct <= 100:
        raise ValidationError(f"bad percentile range ({low_pct}, {high_pct})")
    lows, highs = [], []
    for b in range(grid.bands):
        vals = grid.data[b].ravel()
        if grid.nodata is not None:
            vals = vals[vals != grid.nodata]
        if vals.size == 0:
            raise ValidationError(
                f"band {grid.band_names[b]} has no valid samples")
        lo = float(np.percentile(vals, low_pct, method="nearest"))
        hi = float(np.percentile(vals, high_pct, method="nearest"))
        if hi == lo:
            hi = lo + 1.0  # constant band: widen so scaling stays finite
        lows.append(lo)
        highs.append(hi)
    return NormStats(bands=tuple(grid.band_names), low=tuple(lows),
                     high=tuple(highs))


def pool_norm_stats(stats_list) -> NormStats:
    """Combine per-scene stats into corpus-wide ones (min low, max high)."""
    if not stats_list:
        raise ValidationError("no stats to pool")
    bands = stats_list[0].bands
    for s in stats_list:
        if s.bands != bands:
            raise ValidationError("cannot pool stats over different bands")
    low = tuple(min(s.low[i] for s in stats_list) for i in range(len(bands)))
    high = tuple(max(s.high[i] for s in stats_list) for i in range(len(bands)))
    return NormStats(bands=bands, low=low, high=high)


def _normalize_band(plane, lo, hi):
    out = (plane.astype(np.float32) - np.float32(lo)) / np.float32(hi - lo)
    return np.clip(out, 0.0, 1.0, out=out)


def build_channel_stack(grid: RasterGrid, mode: str,
                        stats: NormStats | None = None) -> ChannelStack:
    """Assemble the float input stack for one mode.

    A grid whose band names already equal the mode's channel list is
    treated as a prepared stack and passed through untouched. Otherwise
    the grid must carry the four raw bands B,G,R,NIR: indices are
    computed from the raw values first, then the raw bands are rescaled
    to [0,1] with `stats`.
    """
    if mode not in MODES:
        raise ValidationError(f"unknown mode {mode!r}, expected LU3 or LU6")
    names = MODES[mode]
    if list(grid.band_names) == names:
        mask = None
        if grid.nodata is not None:
            mask = (grid.data == grid.data.dtype.type(grid.nodata)).any(axis=0)
        return ChannelStack(channels=grid.data.astype(np.float32),
                            names=list(names), width=grid.width,
                            height=grid.height, norm=None, mask=mask)
    if list(grid.band_names) != RAW_BANDS:
        raise ValidationError(
            f"expected bands {RAW_BANDS} or prepared {names}, "
            f"got {grid.band_names}")
    if stats is None:
        stats = compute_norm_stats(grid)
    if list(stats.bands) != RAW_BANDS:
        raise ValidationError(f"norm stats bands {stats.bands} != {RAW_BANDS}")
    raw = {n: grid.data[i].astype(np.float32) for i, n in enumerate(RAW_BANDS)}
    mask = None
    if grid.nodata is not None:
        nd = grid.data.dtype.type(grid.nodata)
        mask = (grid.data == nd).any(axis=0)
    planes = []
    for name in names:
        if name == "NDVI":
            planes.append(normalized_difference(raw["NIR"], raw["R"]))
        elif name == "NDWI":
            planes.append(normalized_difference(raw["G"], raw["NIR"]))
        else:
            i = RAW_BANDS.index(name)
            planes.append(_normalize_band(raw[name], stats.low[i],
                                          stats.high[i]))
    return ChannelStack(channels=np.stack(planes), names=list(names),
                        width=grid.width, height=grid.height,
                        norm=stats, mask=mask)
