"""Tile wire protocol v1: framed tensor exchange over stdin/stdout.

Every frame is a u32 little-endian header length, a UTF-8 JSON header,
then a raw payload whose size is implied by the header. Headers are
written with compact separators and a fixed key order, so a given
conversation has exactly one byte encoding; conformance tests compare
transcripts byte for byte.

Frame types:
  hello    parent->child {"type","version","channels","tile"}; child
           replies {"type","version"}; versions must match.
  predict  {"type","id","dtype":"f32","channels","height","width"} +
           channels*height*width float32 LE samples, band-sequential.
  labels   {"type","id","dtype":"u8","height","width"} + height*width
           bytes of class ids.
  error    {"type","id","message"}; no payload; id may be null.
  bye      {"type"}; no payload; child exits.
"""

import json
import os
import select
import struct
import time

import numpy as np

from .errors import ProtocolError

VERSION = 1

# refuse absurd frames before allocating for them
MAX_HEADER_BYTES = 1 << 20
MAX_PAYLOAD_BYTES = 1 << 31


class EndOfStream(ProtocolError):
    """The peer closed the stream."""


def hello_header(channels, tile):
    return {"type": "hello", "version": VERSION, "channels": channels,
            "tile": tile}


def hello_reply_header():
    return {"type": "hello", "version": VERSION}


def predict_header(tile_id, channels, height, width):
    return {"type": "predict", "id": tile_id, "dtype": "f32",
            "channels": channels, "height": height, "width": width}


def labels_header(tile_id, height, width):
    return {"type": "labels", "id": tile_id, "dtype": "u8",
            "height": height, "width": width}


def bye_header():
    return {"type": "bye"}


def error_header(tile_id, message):
    return {"type": "error", "id": tile_id, "message": message}


def payload_size(header) -> int:
    """Payload bytes implied by a header; 0 for control frames."""
    kind = header.get("type")
    try:
        if kind == "predict":
            if header["dtype"] != "f32":
                raise ProtocolError(
                    f"predict dtype must be f32, got {header['dtype']!r}")
            n = int(header["channels"]) * int(header["height"]) * \
                int(header["width"])
            if n <= 0:
                raise ProtocolError(f"bad predict dimensions in {header}")
            return n * 4
        if kind == "labels":
            if header["dtype"] != "u8":
                raise ProtocolError(
                    f"labels dtype must be u8, got {header['dtype']!r}")
            n = int(header["height"]) * int(header["width"])
            if n <= 0:
                raise ProtocolError(f"bad labels dimensions in {header}")
            return n
    except KeyError as e:
        raise ProtocolError(f"header {header} missing field {e}") from e
    return 0


def encode_frame(header, payload=b"") -> bytes:
    raw = json.dumps(header, separators=(",", ":")).encode("utf-8")
    return struct.pack("<I", len(raw)) + raw + payload


def write_frame(stream, header, payload=b""):
    stream.write(encode_frame(header, payload))
    stream.flush()


class FrameReader:
    """Reads frames from a byte stream, tracking the absolute offset so
    errors can name the exact byte where the conversation broke.

    With a deadline (seconds), reads select() on the underlying fd and
    raise ProtocolError on timeout; use that only for pipe-backed
    streams opened unbuffered.
    """

    def __init__(self, stream):
        self._stream = stream
        self.offset = 0

    def _read_exact(self, n, deadline, what):
        buf = bytearray()
        while len(buf) < n:
            if deadline is not None:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise ProtocolError(
                        f"timed out waiting for {what} at byte offset "
                        f"{self.offset}")
                ready, _, _ = select.select([self._stream], [], [], remaining)
                if not ready:
                    raise ProtocolError(
                        f"timed out waiting for {what} at byte offset "
                        f"{self.offset}")
                chunk = os.read(self._stream.fileno(), n - len(buf))
            else:
                chunk = self._stream.read(n - len(buf))
            if not chunk:
                raise EndOfStream(
                    f"stream closed while reading {what} at byte offset "
                    f"{self.offset} ({len(buf)} of {n} bytes)")
            buf.extend(chunk)
            self.offset += len(chunk)
        return bytes(buf)

    def read_frame(self, timeout=None, eof_ok=False):
        """Returns (header dict, payload bytes); None on a clean EOF at a
        frame boundary when eof_ok is set."""
        deadline = None if timeout is None else time.monotonic() + timeout
        start = self.offset
        try:
            raw_len = self._read_exact(4, deadline, "frame length")
        except EndOfStream:
            if eof_ok and self.offset == start:
                return None
            raise
        (hlen,) = struct.unpack("<I", raw_len)
        if hlen == 0 or hlen > MAX_HEADER_BYTES:
            raise ProtocolError(
                f"implausible header length {hlen} at byte offset {start}")
        raw = self._read_exact(hlen, deadline, "frame header")
        try:
            header = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ProtocolError(
                f"malformed frame header at byte offset {start + 4}: {e}") \
                from e
        if not isinstance(header, dict) or "type" not in header:
            raise ProtocolError(
                f"frame header at byte offset {start + 4} has no type")
        size = payload_size(header)
        if size > MAX_PAYLOAD_BYTES:
            raise ProtocolError(f"payload of {size} bytes exceeds limit")
        payload = self._read_exact(size, deadline,
                                   f"{header['type']} payload") if size else b""
        return header, payload


def decode_predict_payload(header, payload) -> np.ndarray:
    c = int(header["channels"])
    h = int(header["height"])
    w = int(header["width"])
    return np.frombuffer(payload, dtype="<f4").reshape(c, h, w)


def decode_labels_payload(header, payload) -> np.ndarray:
    h = int(header["height"])
    w = int(header["width"])
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w)


def serve(predict_fn, stdin=None, stdout=None):
    """Child-side loop: handshake, then answer predicts until bye/EOF.

    predict_fn maps a (channels, height, width) float32 array to an
    (height, width) uint8 label array. Exceptions inside predict_fn are
    reported as error frames carrying the in-flight id; the loop then
    continues. Returns the number of tiles served.
    """
    import sys
    stdin = stdin if stdin is not None else sys.stdin.buffer
    stdout = stdout if stdout is not None else sys.stdout.buffer
    reader = FrameReader(stdin)
    header, _ = reader.read_frame()
    if header.get("type") != "hello":
        raise ProtocolError(f"expected hello, got {header.get('type')!r}")
    if header.get("version") != VERSION:
        write_frame(stdout, error_header(
            None, f"unsupported protocol version {header.get('version')}"))
        raise ProtocolError(
            f"unsupported protocol version {header.get('version')}")
    write_frame(stdout, hello_reply_header())
    served = 0
    while True:
        frame = reader.read_frame(eof_ok=True)
        if frame is None:
            return served  # clean EOF between frames
        header, payload = frame
        kind = header["type"]
        if kind == "bye":
            return served
        if kind != "predict":
            write_frame(stdout, error_header(
                header.get("id"), f"unexpected frame type {kind!r}"))
            continue
        tile_id = header["id"]
        try:
            tile = decode_predict_payload(header, payload)
            labels = np.ascontiguousarray(predict_fn(tile), dtype=np.uint8)
            if labels.shape != tile.shape[1:]:
                raise ValueError(
                    f"model returned shape {labels.shape}, tile is "
                    f"{tile.shape[1:]}")
        except Exception as e:  # noqa: BLE001 - must answer every request
            write_frame(stdout, error_header(tile_id, str(e)))
            continue
        write_frame(stdout, labels_header(tile_id, labels.shape[0],
                                          labels.shape[1]), labels.tobytes())
        served += 1


def threshold_model(k):
    """Toy classifier shared with out-of-process children for conformance
    tests: label = clamp(floor(channel0 * K), 0, K-1), computed in
    float64 so every implementation produces identical bytes.
    """
    def predict(tile):
        c0 = tile[0].astype(np.float64)
        labels = np.floor(c0 * k)
        np.clip(labels, 0, k - 1, out=labels)
        return labels.astype(np.uint8)
    return predict
