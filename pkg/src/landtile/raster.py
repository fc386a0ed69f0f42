"""Grid types and a minimal single-file raster format with windowed IO.

The on-disk layout is: 8-byte magic "RSTR0001", a little-endian u32 header
length, a UTF-8 JSON header (width, height, bands, dtype, nodata,
geotransform, band_names), then the raw little-endian payload stored
band-sequentially in row-major order. The header is the sole source of
shape truth; payload length is validated against it on every open. The
fixed band-sequential layout is what makes windowed reads and writes a
matter of two nested seek strides, so whole scenes never need to be
resident in memory.
"""

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import RasterIOError, ValidationError

MAGIC = b"RSTR0001"
IGNORE = 255

DTYPES = {
    "u8": np.dtype("<u1"),
    "u16": np.dtype("<u2"),
    "f32": np.dtype("<f4"),
}

DEFAULT_GEOTRANSFORM = (0.0, 2.0, 0.0, 0.0, 0.0, -2.0)


@dataclass(frozen=True)
class Window:
    """Pixel window; offsets may be negative in padded coordinate space."""

    x0: int
    y0: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValidationError(f"window must have positive size, got {self}")


@dataclass(frozen=True)
class ClassScheme:
    """Ordered label classes: contiguous u8 ids with unique names and colors."""

    classes: tuple  # of (id, name, (r, g, b))

    def __post_init__(self):
        ids = [c[0] for c in self.classes]
        names = [c[1] for c in self.classes]
        if len(self.classes) < 2:
            raise ValidationError("a class scheme needs at least 2 classes")
        if len(self.classes) > IGNORE:
            raise ValidationError(f"at most {IGNORE} classes supported")
        if ids != list(range(len(ids))):
            raise ValidationError(f"class ids must be contiguous 0..K-1, got {ids}")
        if len(set(names)) != len(names):
            raise ValidationError("class names must be unique")

    @property
    def k(self):
        return len(self.classes)

    @property
    def names(self):
        return [c[1] for c in self.classes]

    def palette(self):
        """K x 3 uint8 color lookup table."""
        return np.array([c[2] for c in self.classes], dtype=np.uint8)

    def to_json(self):
        return [{"id": c[0], "name": c[1], "color": list(c[2])} for c in self.classes]

    @classmethod
    def from_json(cls, obj):
        return cls(tuple((c["id"], c["name"], tuple(c["color"])) for c in obj))


# Nine land-use classes. The palette is an implementation constant chosen
# for legible maps, not a measured quantity.
DEFAULT_SCHEME = ClassScheme((
    (0, "cultivated_land", (245, 222, 110)),
    (1, "garden_land", (220, 160, 60)),
    (2, "forest_land", (22, 102, 30)),
    (3, "grass_land", (130, 200, 90)),
    (4, "water_body", (40, 90, 220)),
    (5, "residential_area", (200, 40, 40)),
    (6, "road", (120, 120, 120)),
    (7, "bare_land", (170, 130, 100)),
    (8, "agricultural_facilities", (200, 70, 200)),
))


@dataclass
class RasterGrid:
    """Multi-band sample grid; data is (bands, height, width)."""

    width: int
    height: int
    bands: int
    dtype: str
    data: np.ndarray
    nodata: float | None = None
    geotransform: tuple = DEFAULT_GEOTRANSFORM
    band_names: list = field(default_factory=list)

    def __post_init__(self):
        if self.dtype not in DTYPES:
            raise ValidationError(f"unsupported dtype {self.dtype!r}")
        if not self.band_names:
            self.band_names = [f"band_{i}" for i in range(self.bands)]
        if len(self.band_names) != self.bands:
            raise ValidationError("band_names length must equal bands")
        if len(self.geotransform) != 6:
            raise ValidationError("geotransform needs 6 coefficients")
        if self.geotransform[1] <= 0 or self.geotransform[5] >= 0:
            raise ValidationError("pixel_w must be > 0 and row step negative")
        self.geotransform = tuple(float(g) for g in self.geotransform)
        expect = (self.bands, self.height, self.width)
        if self.data.shape != expect:
            raise ValidationError(f"data shape {self.data.shape} != {expect}")
        self.data = np.ascontiguousarray(self.data, dtype=DTYPES[self.dtype])

    def __eq__(self, other):
        if not isinstance(other, RasterGrid):
            return NotImplemented
        return (self.width == other.width and self.height == other.height
                and self.bands == other.bands and self.dtype == other.dtype
                and self.nodata == other.nodata
                and self.geotransform == other.geotransform
                and self.band_names == other.band_names
                and np.array_equal(self.data, other.data))

    def crop(self, win: Window):
        """Sub-grid over a window fully inside the extent."""
        _check_inside(win, self.width, self.height)
        return RasterGrid(
            width=win.w, height=win.h, bands=self.bands, dtype=self.dtype,
            data=self.data[:, win.y0:win.y0 + win.h, win.x0:win.x0 + win.w].copy(),
            nodata=self.nodata,
            geotransform=translate_geotransform(self.geotransform, win.x0, win.y0),
            band_names=list(self.band_names),
        )


@dataclass
class ClassMap:
    """Single-band u8 label grid; 255 marks pixels to ignore."""

    width: int
    height: int
    labels: np.ndarray
    geotransform: tuple = DEFAULT_GEOTRANSFORM
    scheme: ClassScheme | None = None

    def __post_init__(self):
        if self.labels.shape != (self.height, self.width):
            raise ValidationError(
                f"labels shape {self.labels.shape} != {(self.height, self.width)}")
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint8)
        self.geotransform = tuple(float(g) for g in self.geotransform)
        if self.scheme is not None:
            valid = (self.labels == IGNORE) | (self.labels < self.scheme.k)
            if not valid.all():
                bad = int(self.labels[~valid][0])
                raise ValidationError(
                    f"label {bad} outside scheme of {self.scheme.k} classes")

    def __eq__(self, other):
        if not isinstance(other, ClassMap):
            return NotImplemented
        return (self.width == other.width and self.height == other.height
                and self.geotransform == other.geotransform
                and np.array_equal(self.labels, other.labels))


def translate_geotransform(gt, x0, y0):
    """Geotransform of a window whose origin sits at pixel (x0, y0)."""
    return (gt[0] + x0 * gt[1], gt[1], gt[2],
            gt[3] + y0 * gt[5], gt[4], gt[5])


def _check_inside(win: Window, width, height):
    if (win.x0 < 0 or win.y0 < 0
            or win.x0 + win.w > width or win.y0 + win.h > height):
        raise ValidationError(
            f"window {win} outside extent {width}x{height}")


def _header_dict(width, height, bands, dtype, nodata, geotransform, band_names):
    return {
        "width": width,
        "height": height,
        "bands": bands,
        "dtype": dtype,
        "nodata": nodata,
        "geotransform": list(geotransform),
        "band_names": list(band_names),
    }


def _encode_header(hdr):
    raw = json.dumps(hdr, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<I", len(raw)) + raw


def _read_header(f, path):
    magic = f.read(len(MAGIC))
    if magic != MAGIC:
        raise RasterIOError(f"{path}: bad magic {magic!r}")
    raw_len = f.read(4)
    if len(raw_len) != 4:
        raise RasterIOError(f"{path}: truncated header length")
    (hlen,) = struct.unpack("<I", raw_len)
    raw = f.read(hlen)
    if len(raw) != hlen:
        raise RasterIOError(f"{path}: truncated header")
    try:
        hdr = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise RasterIOError(f"{path}: unreadable header: {e}") from e
    for key in ("width", "height", "bands", "dtype", "geotransform", "band_names"):
        if key not in hdr:
            raise RasterIOError(f"{path}: header missing {key!r}")
    if hdr["dtype"] not in DTYPES:
        raise RasterIOError(f"{path}: unsupported dtype {hdr['dtype']!r}")
    return hdr, len(MAGIC) + 4 + hlen


class RasterReader:
    """Windowed access to one raster file; safe for concurrent readers
    as long as each thread holds its own instance."""

    def __init__(self, path):
        self.path = str(path)
        try:
            self._f = open(path, "rb")
        except OSError as e:
            raise RasterIOError(f"cannot open {path}: {e}") from e
        hdr, self._data_start = _read_header(self._f, path)
        self.width = hdr["width"]
        self.height = hdr["height"]
        self.bands = hdr["bands"]
        self.dtype = hdr["dtype"]
        self.nodata = hdr["nodata"]
        self.geotransform = tuple(hdr["geotransform"])
        self.band_names = list(hdr["band_names"])
        self._itemsize = DTYPES[self.dtype].itemsize
        self._plane = self.width * self.height
        expected = self._data_start + self._plane * self.bands * self._itemsize
        actual = os.fstat(self._f.fileno()).st_size
        if actual != expected:
            raise RasterIOError(
                f"{path}: payload is {actual - self._data_start} bytes, "
                f"header implies {expected - self._data_start}")

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        self._f.close()

    def read_window(self, win: Window) -> RasterGrid:
        _check_inside(win, self.width, self.height)
        out = np.empty((self.bands, win.h, win.w), dtype=DTYPES[self.dtype])
        row_bytes = win.w * self._itemsize
        for b in range(self.bands):
            base = self._data_start + (b * self._plane) * self._itemsize
            if win.w == self.width:
                # Window rows are contiguous on disk: one read per band.
                self._f.seek(base + win.y0 * self.width * self._itemsize)
                buf = self._f.read(row_bytes * win.h)
                if len(buf) != row_bytes * win.h:
                    raise RasterIOError(f"{self.path}: short read")
                out[b] = np.frombuffer(buf, dtype=DTYPES[self.dtype]).reshape(
                    win.h, win.w)
                continue
            for r in range(win.h):
                off = ((win.y0 + r) * self.width + win.x0) * self._itemsize
                self._f.seek(base + off)
                buf = self._f.read(row_bytes)
                if len(buf) != row_bytes:
                    raise RasterIOError(f"{self.path}: short read")
                out[b, r] = np.frombuffer(buf, dtype=DTYPES[self.dtype])
        return RasterGrid(
            width=win.w, height=win.h, bands=self.bands, dtype=self.dtype,
            data=out, nodata=self.nodata,
            geotransform=translate_geotransform(self.geotransform, win.x0, win.y0),
            band_names=list(self.band_names),
        )

    def read_all(self) -> RasterGrid:
        return self.read_window(Window(0, 0, self.width, self.height))


class RasterWriter:
    """Creates a raster file up front and fills it window by window.

    The file is fully sized at creation (unwritten samples read as the fill
    value), so windows may arrive in any order and from a single owning
    thread only.
    """

    def __init__(self, path, width, height, bands, dtype, nodata=None,
                 geotransform=DEFAULT_GEOTRANSFORM, band_names=None, fill=None):
        if dtype not in DTYPES:
            raise RasterIOError(f"unsupported dtype {dtype!r}")
        self.path = str(path)
        self.width = width
        self.height = height
        self.bands = bands
        self.dtype = dtype
        self._itemsize = DTYPES[dtype].itemsize
        self._plane = width * height
        band_names = band_names or [f"band_{i}" for i in range(bands)]
        hdr = _header_dict(width, height, bands, dtype, nodata,
                           geotransform, band_names)
        try:
            self._f = open(path, "wb")
            head = _encode_header(hdr)
            self._f.write(head)
            self._data_start = len(head)
            total = self._plane * bands * self._itemsize
            if fill is None:
                self._f.truncate(self._data_start + total)
            else:
                chunk = np.full(min(total // self._itemsize, 1 << 20), fill,
                                dtype=DTYPES[dtype]).tobytes()
                written = 0
                while written < total:
                    n = min(len(chunk), total - written)
                    self._f.write(chunk[:n])
                    written += n
        except OSError as e:
            raise RasterIOError(f"cannot create {path}: {e}") from e

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def write_window(self, win: Window, data: np.ndarray):
        _check_inside(win, self.width, self.height)
        if data.ndim == 2:
            data = data[None]
        if data.shape != (self.bands, win.h, win.w):
            raise ValidationError(
                f"window data shape {data.shape} != {(self.bands, win.h, win.w)}")
        data = np.ascontiguousarray(data, dtype=DTYPES[self.dtype])
        try:
            for b in range(self.bands):
                base = self._data_start + (b * self._plane) * self._itemsize
                if win.w == self.width:
                    self._f.seek(base + win.y0 * self.width * self._itemsize)
                    self._f.write(data[b].tobytes())
                    continue
                for r in range(win.h):
                    off = ((win.y0 + r) * self.width + win.x0) * self._itemsize
                    self._f.seek(base + off)
                    self._f.write(data[b, r].tobytes())
        except OSError as e:
            raise RasterIOError(f"cannot write {self.path}: {e}") from e

    def close(self):
        self._f.close()


def write_raster(grid: RasterGrid, path):
    """Serialize a grid; reading it back is bit-exact."""
    hdr = _header_dict(grid.width, grid.height, grid.bands, grid.dtype,
                       grid.nodata, grid.geotransform, grid.band_names)
    try:
        with open(path, "wb") as f:
            f.write(_encode_header(hdr))
            f.write(grid.data.tobytes())
    except OSError as e:
        raise RasterIOError(f"cannot write {path}: {e}") from e


def read_raster(path) -> RasterGrid:
    with RasterReader(path) as r:
        return r.read_all()


def read_window(path, win: Window) -> RasterGrid:
    """Read a sub-grid; memory use scales with the window, not the file."""
    with RasterReader(path) as r:
        return r.read_window(win)


def write_class_map(cmap: ClassMap, path):
    grid = RasterGrid(
        width=cmap.width, height=cmap.height, bands=1, dtype="u8",
        data=cmap.labels[None], nodata=IGNORE,
        geotransform=cmap.geotransform, band_names=["labels"],
    )
    write_raster(grid, path)


def read_class_map(path, scheme: ClassScheme | None = None) -> ClassMap:
    grid = read_raster(path)
    if grid.bands != 1 or grid.dtype != "u8":
        raise RasterIOError(f"{path}: class maps are single-band u8 rasters")
    return ClassMap(width=grid.width, height=grid.height, labels=grid.data[0],
                    geotransform=grid.geotransform, scheme=scheme)


def export_class_png(cmap: ClassMap, scheme: ClassScheme, path):
    """Render a label map to 8-bit RGB; ignored pixels come out black."""
    labels = cmap.labels
    bad = (labels >= scheme.k) & (labels != IGNORE)
    if bad.any():
        raise ValidationError(
            f"label {int(labels[bad][0])} has no color in a "
            f"{scheme.k}-class scheme")
    lut = np.zeros((256, 3), dtype=np.uint8)
    lut[:scheme.k] = scheme.palette()
    rgb = lut[labels]
    try:
        Image.fromarray(rgb, mode="RGB").save(path, format="PNG")
    except OSError as e:
        raise RasterIOError(f"cannot write {path}: {e}") from e
