"""Hot numeric kernels, JIT-compiled with numba when available.

Every kernel has a pure-numpy twin that produces bit-identical output
(float accumulation order is fixed on both paths). Selection happens once
at import time: set LANDTILE_NUMBA=0 to force the numpy path, e.g. on
platforms where numba is unavailable or for A/B benchmarking
(benchmarks/bench_kernels.py times both).
"""

import os

import numpy as np

IGNORE = 255

_M64 = 0xFFFFFFFFFFFFFFFF
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_TILE_SALT = 0x9E3779B97F4A7C15
_X_SALT = 0xC2B2AE3D27D4EB4F
_Y_SALT = 0x165667B19E3779F9
_CLASS_SALT = 0xD6E8FEB86659FD93
_INV_2_53 = 1.0 / 9007199254740992.0  # 2**-53

_NINTH = np.float32(1.0 / 9.0)


# ---------------------------------------------------------------- numpy path

def _fin_np(z):
    """splitmix64 finalizer on a uint64 array (wrapping arithmetic)."""
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(_MIX1)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def box_mean3_np(plane):
    """3x3 box mean of a float32 plane; edges clamp to the border pixel."""
    h, w = plane.shape
    p = np.pad(plane, 1, mode="edge")
    s = p[0:h, 0:w] + p[0:h, 1:w + 1]
    s = s + p[0:h, 2:w + 2]
    s = s + p[1:h + 1, 0:w]
    s = s + p[1:h + 1, 1:w + 1]
    s = s + p[1:h + 1, 2:w + 2]
    s = s + p[2:h + 2, 0:w]
    s = s + p[2:h + 2, 1:w + 1]
    s = s + p[2:h + 2, 2:w + 2]
    return s * _NINTH


def degrade_edge_band_np(labels, k, tile_id, seed, band, flip_prob):
    """Redraw labels inside the edge band of a tile, keyed by (seed, tile, x, y).

    With probability flip_prob a pixel's label is replaced by a class drawn
    uniformly from all k classes (so it actually changes with probability
    flip_prob * (k-1)/k). Interior pixels are untouched. Deterministic per
    (seed, tile_id, x, y) regardless of call order.
    """
    h, w = labels.shape
    out = labels.copy()
    if band <= 0 or flip_prob <= 0.0:
        return out
    ys, xs = np.mgrid[0:h, 0:w]
    edge = (xs < band) | (xs >= w - band) | (ys < band) | (ys >= h - band)
    ye = ys[edge].astype(np.uint64)
    xe = xs[edge].astype(np.uint64)

    # seed mix in python ints: wraparound is intended, numpy warns on it
    z0 = (int(seed) ^ (int(tile_id) * _TILE_SALT)) & _M64
    z = _fin_np(np.full(xe.shape, z0, dtype=np.uint64))
    z = z ^ (xe * np.uint64(_X_SALT)) ^ (ye * np.uint64(_Y_SALT))
    z = _fin_np(z)

    u = (z >> np.uint64(11)).astype(np.float64) * _INV_2_53
    flip = u < flip_prob
    cls = _fin_np(z ^ np.uint64(_CLASS_SALT)) % np.uint64(k)

    sel = out[edge]
    sel[flip] = cls[flip].astype(np.uint8)
    out[edge] = sel
    return out


def accumulate_confusion_np(truth, pred, k, counts):
    """Add per-pixel (truth, pred) counts into a k x k int64 matrix in place."""
    t = truth.ravel()
    p = pred.ravel()
    m = (t != IGNORE) & (p != IGNORE)
    idx = t[m].astype(np.int64) * k + p[m].astype(np.int64)
    counts += np.bincount(idx, minlength=k * k).reshape(k, k)
    return counts


# ---------------------------------------------------------------- numba path

_env = os.environ.get("LANDTILE_NUMBA", "1").strip().lower()
_want_numba = _env not in ("0", "false", "no", "off")

USING_NUMBA = False

if _want_numba:
    try:
        from numba import njit

        @njit(cache=True, nogil=True)
        def _fin_nb(z):
            z ^= z >> np.uint64(30)
            z *= np.uint64(_MIX1)
            z ^= z >> np.uint64(27)
            z *= np.uint64(_MIX2)
            z ^= z >> np.uint64(31)
            return z

        @njit(cache=True, nogil=True)
        def box_mean3_nb(plane):
            h, w = plane.shape
            out = np.empty_like(plane)
            c = np.float32(1.0 / 9.0)
            for y in range(h):
                ym = y - 1 if y > 0 else 0
                yp = y + 1 if y < h - 1 else h - 1
                for x in range(w):
                    xm = x - 1 if x > 0 else 0
                    xp = x + 1 if x < w - 1 else w - 1
                    s = plane[ym, xm] + plane[ym, x]
                    s = s + plane[ym, xp]
                    s = s + plane[y, xm]
                    s = s + plane[y, x]
                    s = s + plane[y, xp]
                    s = s + plane[yp, xm]
                    s = s + plane[yp, x]
                    s = s + plane[yp, xp]
                    out[y, x] = s * c
            return out

        @njit(cache=True, nogil=True)
        def degrade_edge_band_nb(labels, k, tile_id, seed, band, flip_prob):
            h, w = labels.shape
            out = labels.copy()
            if band <= 0 or flip_prob <= 0.0:
                return out
            base = np.uint64(seed) ^ (np.uint64(tile_id) * np.uint64(_TILE_SALT))
            base = _fin_nb(base)
            kk = np.uint64(k)
            for y in range(h):
                for x in range(w):
                    if (x >= band and x < w - band
                            and y >= band and y < h - band):
                        continue
                    z = base ^ (np.uint64(x) * np.uint64(_X_SALT)) \
                        ^ (np.uint64(y) * np.uint64(_Y_SALT))
                    z = _fin_nb(z)
                    u = np.float64(z >> np.uint64(11)) * _INV_2_53
                    if u < flip_prob:
                        c = _fin_nb(z ^ np.uint64(_CLASS_SALT)) % kk
                        out[y, x] = np.uint8(c)
            return out

        @njit(cache=True, nogil=True)
        def accumulate_confusion_nb(truth, pred, k, counts):
            t = truth.ravel()
            p = pred.ravel()
            for i in range(t.size):
                ti = t[i]
                pi = p[i]
                if ti != IGNORE and pi != IGNORE:
                    counts[ti, pi] += 1
            return counts

        USING_NUMBA = True
    except ImportError:
        USING_NUMBA = False

if USING_NUMBA:
    box_mean3 = box_mean3_nb
    degrade_edge_band = degrade_edge_band_nb
    accumulate_confusion = accumulate_confusion_nb
else:
    box_mean3 = box_mean3_np
    degrade_edge_band = degrade_edge_band_np
    accumulate_confusion = accumulate_confusion_np
