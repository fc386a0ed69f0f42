/**
 * The two model callables the bridge ships with: a deterministic toy
 * for conformance tests, and a stub marking where a real network's
 * forward pass plugs in. No weights are shipped.
 */

import { TileModel } from "./protocol";

/**
 * Toy classifier shared with the parent's conformance tests:
 * label = clamp(floor(channel0 * k), 0, k-1), computed in f64 (the
 * only JS number type) so every implementation produces identical
 * bytes. Channels past the first are ignored.
 */
export function thresholdModel(k: number): TileModel {
  if (!Number.isInteger(k) || k < 2 || k > 255) {
    throw new RangeError(`k must be an integer in 2..255, got ${k}`);
  }
  return (tile, _channels, height, width) => {
    const n = height * width;
    const labels = new Uint8Array(n);
    for (let i = 0; i < n; i++) {
      let v = Math.floor(tile[i] * k);
      if (v < 0) v = 0;
      if (v > k - 1) v = k - 1;
      labels[i] = v; // NaN assigns as 0, matching a float->u8 cast
    }
    return labels;
  };
}

/**
 * Where a real model goes: the tile arrives exactly as a 6-channel
 * network consumes it, one Float32Array plane per channel in band
 * order. Replace `forward` with an actual forward pass that returns
 * one class id per pixel; until then every predict is answered with
 * an error frame and the session keeps running.
 */
export function networkStub(_k: number): TileModel {
  return (tile, channels, height, width) => {
    const plane = height * width;
    const planes: Float32Array[] = [];
    for (let c = 0; c < channels; c++) {
      planes.push(tile.subarray(c * plane, (c + 1) * plane));
    }
    return forward(planes, height, width);
  };
}

function forward(
  _planes: Float32Array[], _height: number, _width: number,
): Uint8Array {
  throw new Error(
    "network stub: no weights shipped, plug a real forward pass here");
}
