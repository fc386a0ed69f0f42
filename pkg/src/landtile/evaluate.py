"""Confusion-matrix accuracy assessment.

Counts are K x K nonnegative integers with counts[t][p] = pixels of
truth class t predicted as p; pixels where either side is IGNORE are
excluded (labels are allowed to contain masked regions). Matrices add
elementwise, so windowed accumulation over a large map merges partial
results deterministically and equals the whole-map count exactly.
"""

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .kernels import IGNORE, accumulate_confusion
from .raster import ClassMap, RasterReader, Window
from .tiling import TilePlan


@dataclass
class ConfusionMatrix:
    k: int
    counts: np.ndarray = None

    def __post_init__(self):
        if self.k < 2:
            raise ValidationError(f"need at least 2 classes, got {self.k}")
        if self.counts is None:
            self.counts = np.zeros((self.k, self.k), dtype=np.int64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (self.k, self.k):
            raise ValidationError(
                f"counts shape {self.counts.shape} != {(self.k, self.k)}")
        if (self.counts < 0).any():
            raise ValidationError("counts must be nonnegative")

    @property
    def total(self):
        return int(self.counts.sum())

    def __add__(self, other):
        if not isinstance(other, ConfusionMatrix) or other.k != self.k:
            return NotImplemented
        return ConfusionMatrix(self.k, self.counts + other.counts)

    def __eq__(self, other):
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        return self.k == other.k and np.array_equal(self.counts, other.counts)

    def accumulate(self, truth: np.ndarray, pred: np.ndarray):
        _check_labels(truth, self.k, "truth")
        _check_labels(pred, self.k, "prediction")
        accumulate_confusion(np.ascontiguousarray(truth),
                             np.ascontiguousarray(pred), self.k, self.counts)

    def producer_accuracy(self):
        """Per truth class: correct / truth pixels; None where unseen."""
        row = self.counts.sum(axis=1)
        diag = np.diag(self.counts)
        return [float(diag[i]) / row[i] if row[i] else None
                for i in range(self.k)]

    def user_accuracy(self):
        """Per predicted class: correct / predicted pixels; None where unused."""
        col = self.counts.sum(axis=0)
        diag = np.diag(self.counts)
        return [float(diag[i]) / col[i] if col[i] else None
                for i in range(self.k)]


def _check_labels(labels, k, what):
    bad = (labels != IGNORE) & (labels >= k)
    if bad.any():
        raise ValidationError(
            f"{what} contains label {int(labels[bad][0])} outside "
            f"0..{k - 1} and IGNORE")


def _check_same_shape(pred: ClassMap, truth: ClassMap):
    if (pred.width, pred.height) != (truth.width, truth.height):
        raise ValidationError(
            f"prediction is {pred.width}x{pred.height}, truth is "
            f"{truth.width}x{truth.height}")


def confusion(pred: ClassMap, truth: ClassMap, k) -> ConfusionMatrix:
    _check_same_shape(pred, truth)
    cm = ConfusionMatrix(k)
    cm.accumulate(truth.labels, pred.labels)
    return cm


def confusion_streamed(pred_path, truth_path, k, rows=512) -> ConfusionMatrix:
    """Windowed accumulation over two label rasters; memory O(rows*width)."""
    cm = ConfusionMatrix(k)
    with RasterReader(pred_path) as rp, RasterReader(truth_path) as rt:
        if (rp.width, rp.height) != (rt.width, rt.height):
            raise ValidationError(
                f"prediction is {rp.width}x{rp.height}, truth is "
                f"{rt.width}x{rt.height}")
        for y0 in range(0, rp.height, rows):
            h = min(rows, rp.height - y0)
            win = Window(0, y0, rp.width, h)
            cm.accumulate(rt.read_window(win).data[0],
                          rp.read_window(win).data[0])
    return cm


def overall_accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise ValidationError("no evaluated pixels: overall accuracy undefined")
    return float(np.trace(cm.counts)) / cm.total


def seam_band_mask(plan: TilePlan, band) -> np.ndarray:
    """True within `band` pixels of any interior center-window seam."""
    if band < 1:
        raise ValidationError(f"band must be >= 1, got {band}")
    s = plan.spec.stride
    mask = np.zeros((plan.height, plan.width), dtype=bool)
    for j in range(1, plan.tiles_x):
        x = j * s
        mask[:, max(0, x - band):min(plan.width, x + band)] = True
    for i in range(1, plan.tiles_y):
        y = i * s
        mask[max(0, y - band):min(plan.height, y + band), :] = True
    return mask


def boundary_accuracy(pred: ClassMap, truth: ClassMap, plan: TilePlan,
                      band, k) -> float:
    """Overall accuracy restricted to the seam neighborhoods of a plan."""
    _check_same_shape(pred, truth)
    if (pred.width, pred.height) != (plan.width, plan.height):
        raise ValidationError("plan extent does not match the maps")
    mask = seam_band_mask(plan, band)
    if not mask.any():
        raise ValidationError(
            "plan has no interior seams: boundary band is empty")
    t = truth.labels[mask]
    p = pred.labels[mask]
    cm = ConfusionMatrix(k)
    cm.accumulate(t, p)
    return overall_accuracy(cm)


def report(cm: ConfusionMatrix, class_names, path, meta=None):
    """Write a JSON report and a CSV twin next to it.

    The CSV has one row per truth class: counts against each predicted
    class, then producer/user accuracy; a final row carries the overall
    accuracy.
    """
    if len(class_names) != cm.k:
        raise ValidationError(
            f"{len(class_names)} names for {cm.k} classes")
    oa = overall_accuracy(cm)
    doc = {
        "class_names": list(class_names),
        "counts": cm.counts.tolist(),
        "overall_accuracy": oa,
        "per_class_producer_accuracy": cm.producer_accuracy(),
        "per_class_user_accuracy": cm.user_accuracy(),
        "meta": meta or {},
    }
    path = str(path)
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")
    csv_path = path[:-5] + ".csv" if path.endswith(".json") else path + ".csv"
    prod = cm.producer_accuracy()
    user = cm.user_accuracy()
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["truth_class"] + [f"pred_{n}" for n in class_names]
                   + ["producer_accuracy", "user_accuracy"])
        for i, name in enumerate(class_names):
            w.writerow([name] + cm.counts[i].tolist()
                       + [_fmt(prod[i]), _fmt(user[i])])
        w.writerow(["overall"] + [""] * cm.k + [f"{oa:.6f}", ""])
    return doc


def _fmt(v):
    return "" if v is None else f"{v:.6f}"


def parse_report(path) -> ConfusionMatrix:
    with open(path) as f:
        doc = json.load(f)
    counts = np.array(doc["counts"], dtype=np.int64)
    return ConfusionMatrix(k=counts.shape[0], counts=counts)
