"""Classifier backends behind one contract.

A backend maps (tile_id, ChannelStack tile, source window) to a u8 label
tile. Built-ins: the oracle (returns padded ground truth, isolating
geometry from model error), an edge degrader that corrupts a band along
tile borders with deterministic per-pixel randomness, the trained linear
model, and a client for out-of-process models speaking the tile wire
protocol over stdin/stdout.
"""

import shlex
import subprocess

import numpy as np

from . import protocol
from .errors import BackendError, ProtocolError, ValidationError
from .kernels import IGNORE, degrade_edge_band
from .model import LinearModel
from .raster import ClassMap, Window
from .spectral import ChannelStack
from .tiling import pad_indices


class Backend:
    """Contract: predict() is pure and safe to call from any one thread;
    channels is the required input channel count or None for any."""

    channels = None

    def predict(self, tile_id: int, stack: ChannelStack,
                source_window: Window) -> np.ndarray:
        raise NotImplementedError

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _check_channels(backend, stack):
    if backend.channels is not None and len(stack.names) != backend.channels:
        raise ValidationError(
            f"backend expects {backend.channels} channels, tile has "
            f"{len(stack.names)}")


class OracleBackend(Backend):
    """Answers with the ground-truth labels for the tile's source window,
    padded the same way the imagery was (zero mode pads with IGNORE,
    since 0 is a real class)."""

    def __init__(self, truth: ClassMap, pad_mode="mirror"):
        self.truth = truth
        self.pad_mode = pad_mode

    def predict(self, tile_id, stack, source_window):
        win = source_window
        xi, xv = pad_indices(win.x0, win.w, self.truth.width, self.pad_mode)
        yi, yv = pad_indices(win.y0, win.h, self.truth.height, self.pad_mode)
        labels = self.truth.labels[yi[:, None], xi[None, :]].copy()
        if self.pad_mode == "zero":
            labels[~yv, :] = IGNORE
            labels[:, ~xv] = IGNORE
        return labels


class EdgeDegradedBackend(Backend):
    """Wraps a backend and flips labels near tile edges.

    Within `band` pixels of any tile border, each label is redrawn with
    probability flip_prob from the uniform distribution over all K
    classes, so it actually changes with probability flip_prob*(K-1)/K.
    The draw is a pure function of (seed, tile_id, x, y): schedules and
    worker counts cannot move it.
    """

    def __init__(self, inner: Backend, band, flip_prob, seed, k):
        if band < 0:
            raise ValidationError(f"band must be >= 0, got {band}")
        if not 0 <= flip_prob <= 1:
            raise ValidationError(
                f"flip_prob must be in [0, 1], got {flip_prob}")
        if k < 2:
            raise ValidationError(f"need at least 2 classes, got {k}")
        self.inner = inner
        self.band = int(band)
        self.flip_prob = float(flip_prob)
        self.seed = int(seed)
        self.k = int(k)

    @property
    def channels(self):
        return self.inner.channels

    def predict(self, tile_id, stack, source_window):
        labels = self.inner.predict(tile_id, stack, source_window)
        t = min(labels.shape)
        if 2 * self.band > t:
            raise ValidationError(
                f"band {self.band} exceeds half the tile size {t}")
        if self.band == 0 or self.flip_prob == 0:
            return labels
        return degrade_edge_band(labels, self.k, tile_id, self.seed,
                                 self.band, self.flip_prob)

    def close(self):
        self.inner.close()


class LinearBackend(Backend):
    """Runs a trained LinearModel on each tile in-process."""

    def __init__(self, model: LinearModel):
        self.model = model
        self.channels = model.channels

    def predict(self, tile_id, stack, source_window):
        _check_channels(self, stack)
        return self.model.predict(stack)


class ExternalBackend(Backend):
    """Client for a child process speaking tile wire protocol v1.

    The channel is strictly alternating request/response; one instance
    serves one thread. A dead or misbehaving child is an error naming
    the in-flight tile; no restart is attempted.
    """

    def __init__(self, command, channels, tile=640, timeout=60.0):
        self.command = (shlex.split(command) if isinstance(command, str)
                        else list(command))
        self.channels = int(channels)
        self.tile = int(tile)
        self.timeout = float(timeout)
        self._inflight = None
        try:
            self._proc = subprocess.Popen(
                self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                bufsize=0)
        except OSError as e:
            raise BackendError(
                f"cannot spawn backend {self.command}: {e}") from e
        self._reader = protocol.FrameReader(self._proc.stdout)
        try:
            protocol.write_frame(
                self._proc.stdin,
                protocol.hello_header(self.channels, self.tile))
            header, _ = self._read_reply("handshake")
        except (ProtocolError, BackendError):
            self._kill()
            raise
        except OSError as e:  # child died before reading the hello
            self._kill()
            raise BackendError(
                f"backend died during handshake: {e}") from e
        if header.get("type") != "hello" or header.get("version") != \
                protocol.VERSION:
            self._kill()
            raise ProtocolError(
                f"handshake failed: child answered {header}, expected "
                f"hello version {protocol.VERSION}")

    def _read_reply(self, what):
        try:
            return self._reader.read_frame(timeout=self.timeout)
        except protocol.EndOfStream as e:
            rc = self._proc.poll()
            raise BackendError(
                f"backend exited (code {rc}) during {what}: {e}") from e

    def predict(self, tile_id, stack, source_window):
        _check_channels(self, stack)
        if self._proc.poll() is not None:
            raise BackendError(
                f"backend process is gone (exit code {self._proc.poll()})")
        self._inflight = tile_id
        payload = np.ascontiguousarray(stack.channels, dtype="<f4").tobytes()
        header = protocol.predict_header(tile_id, len(stack.names),
                                         stack.height, stack.width)
        try:
            protocol.write_frame(self._proc.stdin, header, payload)
        except (BrokenPipeError, OSError) as e:
            raise BackendError(
                f"backend died while receiving tile {tile_id}: {e}") from e
        reply, data = self._read_reply(f"tile {tile_id}")
        kind = reply.get("type")
        if kind == "error":
            raise BackendError(
                f"backend reported error for tile {reply.get('id')}: "
                f"{reply.get('message')}")
        if kind != "labels":
            raise ProtocolError(
                f"expected labels for tile {tile_id}, got {kind!r} at byte "
                f"offset {self._reader.offset}")
        if reply.get("id") != tile_id:
            raise ProtocolError(
                f"labels for tile {reply.get('id')} arrived while tile "
                f"{tile_id} was in flight")
        if (reply.get("height"), reply.get("width")) != \
                (stack.height, stack.width):
            raise ProtocolError(
                f"tile {tile_id}: labels are "
                f"{reply.get('height')}x{reply.get('width')}, expected "
                f"{stack.height}x{stack.width}")
        self._inflight = None
        return protocol.decode_labels_payload(reply, data).copy()

    def close(self):
        if self._proc.poll() is None:
            try:
                protocol.write_frame(self._proc.stdin, protocol.bye_header())
                self._proc.stdin.close()
            except (BrokenPipeError, OSError):
                pass
            try:
                self._proc.wait(timeout=10)
            except subprocess.TimeoutExpired:
                self._kill()

    def _kill(self):
        if self._proc.poll() is None:
            self._proc.kill()
            self._proc.wait()


def make_oracle_backend(truth: ClassMap, pad_mode="mirror") -> Backend:
    return OracleBackend(truth, pad_mode)


def make_edge_degraded(inner: Backend, band, flip_prob, seed, k) -> Backend:
    return EdgeDegradedBackend(inner, band, flip_prob, seed, k)


def make_linear_backend(model: LinearModel) -> Backend:
    return LinearBackend(model)


def make_external_backend(command, channels, tile=640,
                          timeout=60.0) -> Backend:
    return ExternalBackend(command, channels, tile, timeout)
