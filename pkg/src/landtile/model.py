"""Per-pixel softmax classifier over raw + 3x3-box-mean features.

This is the trainable desk-scale stand-in for a deep segmentation net:
the smallest model whose accuracy still responds to the choice of input
channels. Each pixel is classified from 2C+1 features (its C channel
values, the C local 3x3 means, and a bias); weights are fit with Adam on
pixel-wise cross-entropy, IGNORE pixels masked out. Training math runs
in float64 for reproducible results; stored weights are float32.

Model files are a u32 little-endian header length, a JSON header with
the class count, channel count, feature version, mode, and normalization
stats, then the float32 little-endian weight payload.
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import RasterIOError, ValidationError
from .kernels import IGNORE, box_mean3
from .raster import read_class_map, read_raster
from .spectral import MODES, ChannelStack, NormStats, build_channel_stack
from .tiling import TileSpec, extract_tile, keep_tile, plan_tiles

FEATURE_VERSION = "raw+box3x3/1"


@dataclass
class TileBatch:
    """A unit of training work: image tiles with their label tiles."""

    tiles: list  # of (tile_id, ChannelStack)
    labels: list | None = None  # of ClassMap tiles, aligned with tiles

    def __post_init__(self):
        if not self.tiles:
            raise ValidationError("batch must contain at least one tile")
        _, first = self.tiles[0]
        for _, stack in self.tiles:
            if (len(stack.names), stack.height, stack.width) != \
                    (len(first.names), first.height, first.width):
                raise ValidationError("batch tiles must share shape")
        if self.labels is not None and len(self.labels) != len(self.tiles):
            raise ValidationError("labels must align with tiles")


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer settings; defaults record the reference training recipe
    for a deep backend. Desk-scale linear runs override learning_rate
    (see cli defaults)."""

    learning_rate: float = 1e-5
    weight_decay: float = 5e-4
    beta1: float = 0.99
    beta2: float = 0.999
    batch_size: int = 12
    epochs: int = 20
    seed: int = 0
    augment: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValidationError("learning_rate must be > 0, weight_decay >= 0")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValidationError("betas must lie in (0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValidationError("batch_size and epochs must be >= 1")


def tile_features(channels: np.ndarray) -> np.ndarray:
    """(C, H, W) float32 -> (2C+1, H*W) float32 feature matrix."""
    c, h, w = channels.shape
    feats = np.empty((2 * c + 1, h * w), dtype=np.float32)
    for i in range(c):
        plane = np.ascontiguousarray(channels[i])
        feats[i] = plane.ravel()
        feats[c + i] = box_mean3(plane).ravel()
    feats[2 * c] = 1.0
    return feats


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Column-wise softmax of a (K, N) logit matrix, numerically stable."""
    shifted = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def loss_and_grad(weights, feats, labels, weight_decay=0.0):
    """Mean masked cross-entropy and its gradient.

    weights: (K, F) float64; feats: (F, N); labels: (N,) u8 with IGNORE
    allowed. Returns (loss, grad) with grad shaped like weights.
    """
    k = weights.shape[0]
    mask = labels != IGNORE
    n = int(mask.sum())
    if n == 0:
        raise ValidationError("batch has no labeled pixels")
    f = feats[:, mask].astype(np.float64)
    y = labels[mask].astype(np.int64)
    if y.max() >= k:
        raise ValidationError(f"label {int(y.max())} >= K={k}")
    logits = weights @ f
    p = softmax_rows(logits)
    eps = 1e-300  # guards log(0) at extreme logits
    loss = float(-np.log(p[y, np.arange(n)] + eps).mean())
    p[y, np.arange(n)] -= 1.0
    grad = (p @ f.T) / n
    if weight_decay:
        loss += 0.5 * weight_decay * float((weights ** 2).sum())
        grad = grad + weight_decay * weights
    return loss, grad


class LinearModel:
    """K-way per-pixel classifier; weights (K, 2C+1) float32."""

    def __init__(self, k, channels, weights=None, mode=None, norm=None):
        if k < 2:
            raise ValidationError(f"need at least 2 classes, got {k}")
        if channels < 1:
            raise ValidationError("need at least 1 channel")
        self.k = k
        self.channels = channels
        self.mode = mode
        self.norm = norm
        f = 2 * channels + 1
        if weights is None:
            weights = np.zeros((k, f), dtype=np.float32)
        weights = np.asarray(weights, dtype=np.float32)
        if weights.shape != (k, f):
            raise ValidationError(
                f"weights shape {weights.shape} != {(k, f)}")
        if not np.isfinite(weights).all():
            raise ValidationError("weights must be finite")
        self.weights = weights

    def predict_probs(self, stack: ChannelStack) -> np.ndarray:
        if len(stack.names) != self.channels:
            raise ValidationError(
                f"model expects {self.channels} channels, tile has "
                f"{len(stack.names)}")
        feats = tile_features(stack.channels)
        return softmax_rows(self.weights @ feats)

    def predict(self, stack: ChannelStack) -> np.ndarray:
        """Label plane (H, W) u8: argmax class per pixel."""
        probs = self.predict_probs(stack)
        return probs.argmax(axis=0).astype(np.uint8).reshape(
            stack.height, stack.width)


def save_model(model: LinearModel, path):
    header = {
        "type": "linear_model",
        "version": 1,
        "k": model.k,
        "channels": model.channels,
        "features": FEATURE_VERSION,
        "mode": model.mode,
        "norm_stats": model.norm.to_json() if model.norm else None,
    }
    raw = json.dumps(header, separators=(",", ":")).encode("utf-8")
    try:
        with open(path, "wb") as f:
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(np.ascontiguousarray(model.weights, "<f4").tobytes())
    except OSError as e:
        raise RasterIOError(f"cannot write model {path}: {e}") from e


def load_model(path) -> LinearModel:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise RasterIOError(f"cannot read model {path}: {e}") from e
    if len(blob) < 4:
        raise RasterIOError(f"{path}: not a model file")
    (hlen,) = struct.unpack("<I", blob[:4])
    if len(blob) < 4 + hlen:
        raise RasterIOError(f"{path}: truncated model header")
    try:
        header = json.loads(blob[4:4 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise RasterIOError(f"{path}: unreadable model header: {e}") from e
    if header.get("type") != "linear_model":
        raise RasterIOError(f"{path}: not a linear model file")
    if header.get("features") != FEATURE_VERSION:
        raise RasterIOError(
            f"{path}: feature version {header.get('features')!r} not "
            f"supported (expected {FEATURE_VERSION})")
    k, c = header["k"], header["channels"]
    want = k * (2 * c + 1) * 4
    payload = blob[4 + hlen:]
    if len(payload) != want:
        raise RasterIOError(
            f"{path}: weight payload is {len(payload)} bytes, expected {want}")
    weights = np.frombuffer(payload, dtype="<f4").reshape(k, 2 * c + 1)
    norm = (NormStats.from_json(header["norm_stats"])
            if header.get("norm_stats") else None)
    return LinearModel(k=k, channels=c, weights=weights,
                       mode=header.get("mode"), norm=norm)


def apply_dihedral(arr: np.ndarray, t: int) -> np.ndarray:
    """One of the 8 square symmetries on the last two axes.

    t in [0, 8): rotate by 90*(t % 4) degrees, then mirror the x axis
    when t >= 4.
    """
    if not 0 <= t < 8:
        raise ValidationError(f"transform index {t} outside [0, 8)")
    if arr.shape[-1] != arr.shape[-2]:
        raise ValidationError("dihedral transforms need square tiles")
    out = np.rot90(arr, t % 4, axes=(-2, -1))
    if t >= 4:
        out = out[..., ::-1]
    return np.ascontiguousarray(out)


def invert_dihedral(t: int) -> int:
    """Index of the inverse transform; mirrored variants self-invert."""
    if not 0 <= t < 8:
        raise ValidationError(f"transform index {t} outside [0, 8)")
    return (4 - t) % 4 if t < 4 else t


def augment(image: np.ndarray, labels: np.ndarray, seed) -> tuple:
    """Apply one seed-chosen dihedral transform to both tiles."""
    t = int(np.random.default_rng(seed).integers(0, 8))
    return apply_dihedral(image, t), apply_dihedral(labels, t)


def _adam_step(w, grad, m, v, step, cfg: TrainConfig):
    m *= cfg.beta1
    m += (1 - cfg.beta1) * grad
    v *= cfg.beta2
    v += (1 - cfg.beta2) * grad * grad
    mhat = m / (1 - cfg.beta1 ** step)
    vhat = v / (1 - cfg.beta2 ** step)
    w -= cfg.learning_rate * mhat / (np.sqrt(vhat) + 1e-8)


def load_training_tiles(manifest, mode, tile_spec: TileSpec,
                        min_labeled_frac=0.0, split="train"):
    """Cut every kept tile from the manifest's scenes of one split.

    Tiles are held in memory: desk-scale corpora stay far below RAM; a
    scene-streaming loader is out of scope here.
    """
    stats = NormStats.from_json(manifest["norm_stats"])
    pairs = []
    for scene in manifest["scenes"]:
        if scene["split"] != split:
            continue
        grid = read_raster(scene["image"])
        truth = read_class_map(scene["labels"])
        if (truth.width, truth.height) != (grid.width, grid.height):
            raise ValidationError(
                f"{scene['labels']}: labels extent differs from image")
        stack = build_channel_stack(grid, mode, stats)
        plan = plan_tiles(grid.width, grid.height, tile_spec)
        for k in range(plan.n_tiles):
            label_tile = extract_tile(truth, plan, k)
            if not keep_tile(label_tile.labels, min_labeled_frac):
                continue
            pairs.append((extract_tile(stack, plan, k), label_tile))
    return pairs


def train_linear(manifest, mode, config: TrainConfig,
                 tile_spec: TileSpec = TileSpec(tile=256, stride=256),
                 min_labeled_frac=0.0):
    """Fit a LinearModel on the manifest's training scenes.

    Returns (model, log) where log["epoch_loss"] has one mean batch loss
    per epoch. Deterministic for a given config and manifest.
    """
    if mode not in MODES:
        raise ValidationError(f"unknown mode {mode!r}")
    pairs = load_training_tiles(manifest, mode, tile_spec, min_labeled_frac)
    if not pairs:
        raise ValidationError("manifest has no training tiles")
    k = len(manifest["class_scheme"])
    c = len(MODES[mode])
    rng = np.random.default_rng(config.seed)
    w = np.zeros((k, 2 * c + 1), dtype=np.float64)
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    step = 0
    epoch_loss = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(pairs))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [pairs[i] for i in order[start:start + config.batch_size]]
            feat_blocks, label_blocks = [], []
            for stack, label_tile in batch:
                chans, labels = stack.channels, label_tile.labels
                if config.augment:
                    chans, labels = augment(chans, labels,
                                            (config.seed, epoch, step,
                                             len(feat_blocks)))
                feat_blocks.append(tile_features(chans))
                label_blocks.append(labels.ravel())
            feats = np.concatenate(feat_blocks, axis=1)
            labels = np.concatenate(label_blocks)
            loss, grad = loss_and_grad(w, feats, labels, config.weight_decay)
            if not np.isfinite(loss):
                raise ValidationError(
                    f"training diverged at epoch {epoch}: loss={loss}")
            step += 1
            _adam_step(w, grad, m, v, step, config)
            losses.append(loss)
        epoch_loss.append(float(np.mean(losses)))
    norm = NormStats.from_json(manifest["norm_stats"])
    model = LinearModel(k=k, channels=c,
                        weights=w.astype(np.float32), mode=mode, norm=norm)
    return model, {"epoch_loss": epoch_loss, "steps": step,
                   "tiles": len(pairs)}
