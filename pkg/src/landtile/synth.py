"""Seeded synthetic 4-band scenes with aligned ground truth.

Scenes are built so that channel ablations have something to measure:
several class pairs share identical (B, G, R) statistics and separate
only in NIR (hence in NDVI/NDWI). Water patches and building shadows
look the same in visible light but differ strongly in NIR; grass and
forest differ only through NDVI; bare land and residential areas share
bright high-variance texture apart from NIR. Roads are thin lines that
cross tile seams. Spectral means are synthetic constants chosen for this
separability structure, not radiometric truth.
"""

import json
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ValidationError
from .raster import DEFAULT_SCHEME, ClassMap, RasterGrid, write_class_map, write_raster
from .spectral import RAW_BANDS, compute_norm_stats, pool_norm_stats

SENSOR_MAX = 1023
VAL_FRACTION = 0.05


@dataclass(frozen=True)
class PainterModel:
    """One spectral texture: a class label plus band means and noise."""

    name: str
    label: int
    mean: tuple  # (B, G, R, NIR)
    sigma: float

    def __post_init__(self):
        if len(self.mean) != 4:
            raise ValidationError(f"painter {self.name}: mean must have 4 bands")
        for m in self.mean:
            if not 0 <= m <= SENSOR_MAX:
                raise ValidationError(
                    f"painter {self.name}: mean {m} outside [0, {SENSOR_MAX}]")
        if self.sigma < 0:
            raise ValidationError(f"painter {self.name}: sigma must be >= 0")


# Index layout: painters[0] is the background fill. The shadow painter
# carries the residential label: visibly dark like water, NIR says not.
DEFAULT_PAINTERS = (
    PainterModel("cultivated_land", 0, (180, 300, 200, 620), 25.0),
    PainterModel("garden_land", 1, (180, 300, 200, 420), 25.0),
    PainterModel("forest_land", 2, (150, 250, 160, 750), 25.0),
    PainterModel("grass_land", 3, (150, 250, 160, 380), 25.0),
    PainterModel("water_body", 4, (300, 260, 180, 60), 25.0),
    PainterModel("building_shadow", 5, (300, 260, 180, 300), 25.0),
    PainterModel("residential_area", 5, (500, 480, 460, 420), 60.0),
    PainterModel("road", 6, (420, 400, 390, 330), 25.0),
    PainterModel("bare_land", 7, (560, 520, 500, 620), 60.0),
    PainterModel("agricultural_facilities", 8, (650, 640, 630, 560), 25.0),
)

_BLOB_CYCLE = ("forest_land", "grass_land", "garden_land", "water_body")
_RECT_CYCLE = ("residential_area", "bare_land", "agricultural_facilities")


@dataclass(frozen=True)
class SceneSpec:
    """Recipe for one scene: extent, painters, shape mix, seed."""

    width: int = 512
    height: int = 512
    class_models: tuple = DEFAULT_PAINTERS
    rectangles: int = 5
    blobs: int = 10
    lines: int = 4
    buildings: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValidationError(
                f"scene extent must be positive, got {self.width}x{self.height}")
        labels = {p.label for p in self.class_models}
        if len(labels) < 2:
            raise ValidationError("scene needs at least 2 distinct classes")
        for count in (self.rectangles, self.blobs, self.lines, self.buildings):
            if count < 0:
                raise ValidationError("shape counts must be >= 0")
        if self.seed < 0:
            raise ValidationError("seed must be a nonnegative integer")

    def painter(self, name):
        for i, p in enumerate(self.class_models):
            if p.name == name:
                return i
        raise ValidationError(f"no painter named {name!r}")

    def painter_or_none(self, name):
        try:
            return self.painter(name)
        except ValidationError:
            return None


def _paint_ellipse(pmap, cx, cy, rx, ry, pid):
    h, w = pmap.shape
    y0, y1 = max(0, cy - ry), min(h, cy + ry + 1)
    x0, x1 = max(0, cx - rx), min(w, cx + rx + 1)
    if y0 >= y1 or x0 >= x1:
        return
    yy, xx = np.mgrid[y0:y1, x0:x1]
    inside = (((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2) <= 1.0
    pmap[y0:y1, x0:x1][inside] = pid


def _paint_rect(pmap, x0, y0, rw, rh, pid):
    h, w = pmap.shape
    pmap[max(0, y0):min(h, y0 + rh), max(0, x0):min(w, x0 + rw)] = pid


def _paint_layout(spec: SceneSpec, rng) -> np.ndarray:
    """Painter-index map. Shapes draw their geometry in a fixed order;
    a shape whose painter is absent from class_models still consumes
    its draws but paints nothing, so reduced painter sets stay valid."""
    w, h = spec.width, spec.height
    pmap = np.zeros((h, w), dtype=np.int32)  # background painter 0
    short = min(w, h)
    r_lo, r_hi = max(1, short // 20), max(2, short // 7)
    s_lo, s_hi = max(1, short // 12), max(2, short // 4)

    for b in range(spec.blobs):
        pid = spec.painter_or_none(_BLOB_CYCLE[b % len(_BLOB_CYCLE)])
        cx = int(rng.integers(0, w))
        cy = int(rng.integers(0, h))
        rx = int(rng.integers(r_lo, r_hi + 1))
        ry = int(rng.integers(r_lo, r_hi + 1))
        if pid is not None:
            _paint_ellipse(pmap, cx, cy, rx, ry, pid)

    for r in range(spec.rectangles):
        pid = spec.painter_or_none(_RECT_CYCLE[r % len(_RECT_CYCLE)])
        rw = int(rng.integers(s_lo, s_hi + 1))
        rh = int(rng.integers(s_lo, s_hi + 1))
        x0 = int(rng.integers(0, max(1, w - rw + 1)))
        y0 = int(rng.integers(0, max(1, h - rh + 1)))
        if pid is not None:
            _paint_rect(pmap, x0, y0, rw, rh, pid)

    res = spec.painter_or_none("residential_area")
    sha = spec.painter_or_none("building_shadow")
    for _ in range(spec.buildings):
        rw = int(rng.integers(s_lo, s_hi + 1))
        rh = int(rng.integers(s_lo, s_hi + 1))
        x0 = int(rng.integers(0, max(1, w - rw + 1)))
        y0 = int(rng.integers(0, max(1, h - rh + 1)))
        if res is not None:
            _paint_rect(pmap, x0, y0, rw, rh, res)
        if sha is not None:
            _paint_rect(pmap, x0, y0 + rh, rw, max(2, rh // 3), sha)

    road = spec.painter_or_none("road")
    for i in range(spec.lines):
        width_px = int(rng.integers(3, 8))
        if i % 2 == 0:
            r0 = int(rng.integers(0, max(1, h - width_px + 1)))
        else:
            r0 = int(rng.integers(0, max(1, w - width_px + 1)))
        if road is None:
            continue
        if i % 2 == 0:
            pmap[r0:r0 + width_px, :] = road
        else:
            pmap[:, r0:r0 + width_px] = road
    return pmap


def generate_scene(spec: SceneSpec, return_painter_map=False):
    """Deterministic scene: 4-band u16 grid plus aligned label map.

    Labels and samples come from the same painter map, so a pixel's
    label always names the model that generated its values. The painter
    map itself is returned on request (test hook for per-painter stats;
    labels alone cannot split shadow from residential).
    """
    rng = np.random.default_rng(spec.seed)
    pmap = _paint_layout(spec, rng)
    means = np.array([p.mean for p in spec.class_models], dtype=np.float32)
    sigmas = np.array([p.sigma for p in spec.class_models], dtype=np.float32)
    labels = np.array([p.label for p in spec.class_models], dtype=np.uint8)

    noise = rng.standard_normal(
        size=(4, spec.height, spec.width), dtype=np.float32)
    data = means[pmap].transpose(2, 0, 1) + sigmas[pmap][None] * noise
    np.clip(np.rint(data, out=data), 0, SENSOR_MAX, out=data)
    grid = RasterGrid(width=spec.width, height=spec.height, bands=4,
                      dtype="u16", data=data.astype(np.uint16),
                      band_names=list(RAW_BANDS))
    cmap = ClassMap(width=spec.width, height=spec.height, labels=labels[pmap],
                    scheme=DEFAULT_SCHEME)
    if return_painter_map:
        return grid, cmap, pmap
    return grid, cmap


def scene_seed(corpus_seed, index):
    """Child seed for scene `index`: splittable, order-independent."""
    ss = np.random.SeedSequence([int(corpus_seed), int(index)])
    return int(ss.generate_state(1, np.uint64)[0])


def generate_corpus(out_dir, n_scenes, seed, template: SceneSpec = SceneSpec()):
    """Write n scenes + labels + manifest.json; returns the manifest dict.

    The split is scene-level: the last ceil(5% of n) scenes validate,
    the rest train. Normalization stats pool training scenes only, so
    nothing about validation leaks into the inputs models see.
    """
    if n_scenes < 2:
        raise ConfigError(f"corpus needs at least 2 scenes, got {n_scenes}")
    os.makedirs(out_dir, exist_ok=True)
    n_val = math.ceil(VAL_FRACTION * n_scenes)
    scenes = []
    stats_list = []
    histogram = np.zeros(DEFAULT_SCHEME.k, dtype=np.int64)
    for s in range(n_scenes):
        spec = replace(template, seed=scene_seed(seed, s))
        grid, cmap = generate_scene(spec)
        image_name = f"scene_{s:03d}.rstr"
        labels_name = f"scene_{s:03d}_labels.rstr"
        write_raster(grid, os.path.join(out_dir, image_name))
        write_class_map(cmap, os.path.join(out_dir, labels_name))
        split = "val" if s >= n_scenes - n_val else "train"
        scenes.append({"image": image_name, "labels": labels_name,
                       "split": split})
        if split == "train":
            stats_list.append(compute_norm_stats(grid))
        histogram += np.bincount(cmap.labels[cmap.labels != 255].ravel(),
                                 minlength=DEFAULT_SCHEME.k)
    manifest = {
        "seed": int(seed),
        "scenes": scenes,
        "norm_stats": pool_norm_stats(stats_list).to_json(),
        "class_scheme": DEFAULT_SCHEME.to_json(),
        "class_histogram": {name: int(histogram[i])
                            for i, name in enumerate(DEFAULT_SCHEME.names)},
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")
    return manifest


def load_manifest(path):
    """Read a corpus manifest; scene paths resolve against its directory."""
    try:
        with open(path) as f:
            manifest = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read manifest {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"manifest {path} is not valid JSON: {e}") from e
    for key in ("scenes", "norm_stats", "class_scheme"):
        if key not in manifest:
            raise ConfigError(f"manifest {path} missing {key!r}")
    base = os.path.dirname(os.path.abspath(path))
    for scene in manifest["scenes"]:
        scene["image"] = os.path.join(base, scene["image"])
        scene["labels"] = os.path.join(base, scene["labels"])
    return manifest
