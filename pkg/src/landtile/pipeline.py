"""Tiled map inference: plan, predict, center-crop, stitch.

Worker threads pull tile indices from a shared queue, read only the
window each tile needs, build the channel stack, and hand the backend's
labels to the writer (the calling thread), which stores exactly the
center window of every tile. Center windows partition the extent, so
the stored map does not depend on worker count or completion order, and
with an overlapped spec every output pixel was predicted with its full
neighborhood: tile seams carry no signature.

Backends are created inside each worker via a factory, one instance per
thread, because external backends own a child process with a strictly
alternating request/response channel.
"""

import queue
import resource
import sys
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .backends import Backend
from .errors import BackendError, LandtileError, ValidationError
from .kernels import IGNORE
from .raster import (
    DEFAULT_GEOTRANSFORM,
    ClassMap,
    ClassScheme,
    RasterGrid,
    RasterReader,
    RasterWriter,
    read_class_map,
    read_raster,
    translate_geotransform,
)
from .spectral import (
    MODES,
    RAW_BANDS,
    NormStats,
    build_channel_stack,
    compute_norm_stats,
)
from .tiling import TilePlan, TileSpec, plan_tiles, read_tile_array


@dataclass
class InferenceJob:
    """Everything one inference run needs.

    backend_factory is called once per worker thread and must return a
    fresh or thread-safe Backend. norm is required for raw-band imagery
    unless the file's band names already match the mode's channel list
    (a prepared stack, passed through without rescaling); when omitted
    for raw imagery the stats are computed from the whole image.
    """

    image: str
    output: str
    mode: str
    backend_factory: object
    spec: TileSpec = field(default_factory=TileSpec)
    workers: int = 1
    norm: NormStats | None = None
    scheme: ClassScheme | None = None
    progress: bool = False
    config: dict = field(default_factory=dict)


def _resolve_norm(job, reader):
    """Pick the stats strategy up front so workers never disagree."""
    names = list(reader.band_names)
    if job.mode not in MODES:
        raise ValidationError(f"unknown mode {job.mode!r}")
    if names == MODES[job.mode]:
        return None  # prepared stack, passed through untouched
    if names != RAW_BANDS:
        raise ValidationError(
            f"image bands {names} match neither the raw bands {RAW_BANDS} "
            f"nor the {job.mode} channel list")
    if job.norm is not None:
        return job.norm
    return compute_norm_stats(read_raster(job.image))


def _predict_tile(reader, plan, k, job, norm, backend):
    win = plan.source_window(k)
    arr = read_tile_array(reader, plan, k)
    grid = RasterGrid(
        width=win.w, height=win.h, bands=reader.bands, dtype=reader.dtype,
        data=arr, nodata=reader.nodata,
        geotransform=translate_geotransform(reader.geotransform,
                                            win.x0, win.y0),
        band_names=list(reader.band_names))
    stack = build_channel_stack(grid, job.mode, norm)
    labels = backend.predict(k, stack, win)
    if (not isinstance(labels, np.ndarray) or labels.dtype != np.uint8
            or labels.shape != (win.h, win.w)):
        raise BackendError(
            f"tile {k}: backend returned "
            f"{getattr(labels, 'shape', None)} {getattr(labels, 'dtype', None)}, "
            f"expected uint8 {(win.h, win.w)}")
    ct = plan.center_in_tile(k)
    return labels[ct.y0:ct.y0 + ct.h, ct.x0:ct.x0 + ct.w]


def _worker(job, plan, norm, tiles, results, stop):
    backend = None
    reader = None
    try:
        backend = job.backend_factory()
        if not isinstance(backend, Backend):
            raise ValidationError(
                f"backend factory returned {type(backend).__name__}")
        reader = RasterReader(job.image)
        while not stop.is_set():
            k = tiles.get()
            if k is None:
                break
            try:
                crop = _predict_tile(reader, plan, k, job, norm, backend)
            except LandtileError as e:
                msg = str(e)
                if f"tile {k}" not in msg:
                    e = type(e)(f"tile {k}: {msg}")
                results.put(("error", e))
                return
            except Exception as e:  # backend bug: keep the traceback
                err = BackendError(f"tile {k}: {type(e).__name__}: {e}")
                err.__cause__ = e
                results.put(("error", err))
                return
            results.put((k, crop))
    except Exception as e:
        results.put(("error", e))
    finally:
        if isinstance(backend, Backend):
            backend.close()
        if reader is not None:
            reader.close()


def peak_rss_bytes():
    """High-water resident size of this process.

    Prefer /proc VmHWM, which resets on exec; ru_maxrss is carried into
    children across fork+exec on Linux, so a process spawned by a large
    parent would report the parent's peak instead of its own.
    """
    try:
        with open("/proc/self/status") as f:
            for line in f:
                if line.startswith("VmHWM:"):
                    return int(line.split()[1]) * 1024
    except (OSError, ValueError, IndexError):
        pass
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024


def infer_map(job: InferenceJob):
    """Run a job; returns (ClassMap, run summary dict).

    The map is also stored at job.output as a single-band u8 raster that
    read_class_map() accepts; the returned map is read back from it.
    """
    if job.workers < 1:
        raise ValidationError(f"workers must be >= 1, got {job.workers}")
    t0 = time.monotonic()
    with RasterReader(job.image) as probe:
        norm = _resolve_norm(job, probe)
        plan = plan_tiles(probe.width, probe.height, job.spec)
        geotransform = probe.geotransform

    tiles = queue.Queue()
    for k in range(plan.n_tiles):
        tiles.put(k)
    for _ in range(job.workers):
        tiles.put(None)
    results = queue.Queue()
    stop = threading.Event()
    threads = [
        threading.Thread(target=_worker, name=f"tile-worker-{n}",
                         args=(job, plan, norm, tiles, results, stop),
                         daemon=True)
        for n in range(job.workers)
    ]
    for t in threads:
        t.start()

    failure = None
    done = 0
    seen = set()
    with RasterWriter(job.output, plan.width, plan.height, 1, "u8",
                      nodata=IGNORE, geotransform=geotransform,
                      band_names=["labels"], fill=IGNORE) as writer:
        while done < plan.n_tiles:
            item = results.get()
            if item[0] == "error":
                failure = item[1]
                stop.set()
                break
            k, crop = item
            if k in seen:
                failure = ValidationError(f"tile {k} produced twice")
                stop.set()
                break
            seen.add(k)
            writer.write_window(plan.center_window(k), crop)
            done += 1
            if job.progress:
                i, j = plan.tile_ij(k)
                print(f"tile {i}/{j} done ({done}/{plan.n_tiles})",
                      file=sys.stderr, flush=True)
    for t in threads:
        t.join()
    if failure is not None:
        raise failure

    elapsed = time.monotonic() - t0
    px = plan.width * plan.height
    summary = {
        "image": str(job.image),
        "output": str(job.output),
        "mode": job.mode,
        "width": plan.width,
        "height": plan.height,
        "tile": job.spec.tile,
        "stride": job.spec.stride,
        "pad_mode": job.spec.pad_mode,
        "tiles": plan.n_tiles,
        "workers": job.workers,
        "seconds": round(elapsed, 3),
        "px_per_s": round(px / elapsed, 1) if elapsed > 0 else None,
        "peak_rss_bytes": peak_rss_bytes(),
        "config": dict(job.config),
    }
    return read_class_map(job.output, scheme=job.scheme), summary


def stitch(tile_labels, plan: TilePlan,
           geotransform=DEFAULT_GEOTRANSFORM,
           scheme: ClassScheme | None = None) -> ClassMap:
    """Compose full-tile label arrays into one map, in-memory.

    tile_labels yields (tile index, T x T uint8 array) in any order.
    Every tile must appear exactly once; each contributes only its
    center window, so overlapping margins are discarded here.
    """
    out = np.full((plan.height, plan.width), IGNORE, dtype=np.uint8)
    t = plan.spec.tile
    seen = set()
    for k, labels in tile_labels:
        i, j = plan.tile_ij(k)
        if k in seen:
            raise ValidationError(f"tile ({i}, {j}) stitched twice")
        seen.add(k)
        labels = np.asarray(labels)
        if labels.shape != (t, t) or labels.dtype != np.uint8:
            raise ValidationError(
                f"tile ({i}, {j}): expected uint8 {(t, t)}, got "
                f"{labels.dtype} {labels.shape}")
        c = plan.center_window(k)
        ct = plan.center_in_tile(k)
        out[c.y0:c.y0 + c.h, c.x0:c.x0 + c.w] = \
            labels[ct.y0:ct.y0 + ct.h, ct.x0:ct.x0 + ct.w]
    if len(seen) != plan.n_tiles:
        k = min(set(range(plan.n_tiles)) - seen)
        i, j = plan.tile_ij(k)
        raise ValidationError(f"stitch is missing tile ({i}, {j})")
    return ClassMap(width=plan.width, height=plan.height, labels=out,
                    geotransform=geotransform, scheme=scheme)
