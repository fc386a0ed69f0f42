"""Regenerate the committed protocol conformance transcript.

session.in holds the byte stream a client sends over one session:
hello, 100 predict frames of 6x8x8 float32 tiles, bye. session.out
holds the one valid byte stream a conforming child answers with when
running the shared threshold toy model (K=9). Tile contents come from
closed-form integer arithmetic, not an RNG, so any language can re-derive
the expected labels without matching a generator implementation.

Run from the repository root:

    python3 scripts/make_golden_transcript.py
"""

import io
import pathlib
import sys

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from landtile import protocol  # noqa: E402

K = 9
CHANNELS = 6
TILE = 8
N_TILES = 100
OUT_DIR = pathlib.Path(__file__).resolve().parents[1] / "tests/data/protocol"


def tile_labels(i):
    """Ground truth for tile i: a closed-form class pattern."""
    y, x = np.mgrid[0:TILE, 0:TILE]
    return ((i * 31 + y * 7 + x * 13 + (y * x) % 5) % K).astype(np.uint8)


def tile_payload(i):
    """Channel 0 encodes the labels for the threshold model; the other
    channels carry filler the model must ignore."""
    tile = np.zeros((CHANNELS, TILE, TILE), dtype=np.float32)
    tile[0] = (tile_labels(i).astype(np.float32) + 0.5) / K
    for c in range(1, CHANNELS):
        y, x = np.mgrid[0:TILE, 0:TILE]
        tile[c] = ((c * 1000 + i * 17 + y * 8 + x) % 256).astype(
            np.float32) / 255.0
    return tile


def main():
    request = io.BytesIO()
    protocol.write_frame(request, protocol.hello_header(CHANNELS, TILE))
    for i in range(N_TILES):
        tile = tile_payload(i)
        protocol.write_frame(
            request,
            protocol.predict_header(i, CHANNELS, TILE, TILE),
            np.ascontiguousarray(tile, dtype="<f4").tobytes())
    protocol.write_frame(request, protocol.bye_header())
    session_in = request.getvalue()

    reply = io.BytesIO()
    served = protocol.serve(protocol.threshold_model(K),
                            stdin=io.BytesIO(session_in), stdout=reply)
    assert served == N_TILES, served
    session_out = reply.getvalue()

    for i in range(N_TILES):  # the encoding trick must recover every label
        assert (protocol.threshold_model(K)(tile_payload(i))
                == tile_labels(i)).all(), i

    OUT_DIR.mkdir(parents=True, exist_ok=True)
    (OUT_DIR / "session.in").write_bytes(session_in)
    (OUT_DIR / "session.out").write_bytes(session_out)
    print(f"wrote {len(session_in)} request bytes and {len(session_out)} "
          f"reply bytes under {OUT_DIR}")


if __name__ == "__main__":
    main()
