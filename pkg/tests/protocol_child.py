"""Out-of-process test model speaking tile wire protocol v1 on stdio.

Default behavior answers every predict with the threshold toy model.
Fault modes let tests drive each client error path from a real child
process:

  wrong-version  handshake reply carries version 99
  die-mid        exit(1) right after reading the first predict
  short-payload  labels frame promises more payload bytes than it sends
  wrong-id       labels frames carry id+1
  garbage        writes junk bytes instead of a labels frame
  error-frame    answers every predict with an error frame
  slow           sleeps 5 s before each reply
"""

import argparse
import struct
import sys
import time

import numpy as np

from landtile import protocol


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--k", type=int, default=9)
    ap.add_argument("--mode", default="ok")
    args = ap.parse_args()

    stdin = sys.stdin.buffer
    stdout = sys.stdout.buffer
    model = protocol.threshold_model(args.k)

    if args.mode == "ok":
        protocol.serve(model)
        return 0

    reader = protocol.FrameReader(stdin)
    hello, _ = reader.read_frame()
    if args.mode == "wrong-version":
        protocol.write_frame(stdout, {"type": "hello", "version": 99})
        return 0
    protocol.write_frame(stdout, protocol.hello_reply_header())

    while True:
        frame = reader.read_frame(eof_ok=True)
        if frame is None or frame[0]["type"] == "bye":
            return 0
        header, payload = frame
        tile_id = header.get("id")
        if args.mode == "die-mid":
            return 1
        if args.mode == "garbage":
            stdout.write(b"this is not a frame at all")
            stdout.flush()
            return 0
        if args.mode == "error-frame":
            protocol.write_frame(
                stdout, protocol.error_header(tile_id, "injected failure"))
            continue
        if args.mode == "slow":
            time.sleep(5)
        tile = protocol.decode_predict_payload(header, payload)
        labels = model(tile)
        reply = protocol.labels_header(tile_id, labels.shape[0],
                                       labels.shape[1])
        if args.mode == "wrong-id":
            reply = protocol.labels_header(tile_id + 1, labels.shape[0],
                                           labels.shape[1])
        body = labels.tobytes()
        if args.mode == "short-payload":
            raw = protocol.encode_frame(reply, body[:10])
            stdout.write(raw)
            stdout.flush()
            return 0
        protocol.write_frame(stdout, reply, body)


if __name__ == "__main__":
    sys.exit(main())
