/**
 * Tile wire protocol v1: framed tensor exchange over stdin/stdout.
 *
 * Every frame is a u32 little-endian header length, a UTF-8 JSON
 * header, then a raw payload whose size is implied by the header.
 * Headers are serialized with a fixed key order and no whitespace, so
 * a given conversation has exactly one byte encoding; conformance
 * tests compare whole transcripts byte for byte.
 *
 * Frame types:
 *   hello    parent->child {type, version, channels, tile}; child
 *            replies {type, version}; versions must match.
 *   predict  {type, id, dtype:"f32", channels, height, width} plus
 *            channels*height*width float32 LE samples, band-sequential.
 *   labels   {type, id, dtype:"u8", height, width} plus height*width
 *            bytes of class ids.
 *   error    {type, id, message}; no payload; id may be null.
 *   bye      {type}; no payload; the child exits without replying.
 */

export const VERSION = 1;

// refuse absurd frames before allocating for them
export const MAX_HEADER_BYTES = 1 << 20;
export const MAX_PAYLOAD_BYTES = 2 ** 31;

export class ProtocolError extends Error {}

export class EndOfStream extends ProtocolError {}

export interface FrameHeader {
  type?: unknown;
  [key: string]: unknown;
}

/** (tile samples, channels, height, width) -> height*width class ids. */
export type TileModel = (
  tile: Float32Array,
  channels: number,
  height: number,
  width: number,
) => Uint8Array;

export function helloHeader(channels: number, tile: number): FrameHeader {
  return { type: "hello", version: VERSION, channels, tile };
}

export function helloReplyHeader(): FrameHeader {
  return { type: "hello", version: VERSION };
}

export function predictHeader(
  tileId: number, channels: number, height: number, width: number,
): FrameHeader {
  return { type: "predict", id: tileId, dtype: "f32", channels, height, width };
}

export function labelsHeader(
  tileId: number | null, height: number, width: number,
): FrameHeader {
  return { type: "labels", id: tileId, dtype: "u8", height, width };
}

export function byeHeader(): FrameHeader {
  return { type: "bye" };
}

export function errorHeader(
  tileId: number | null, message: string,
): FrameHeader {
  return { type: "error", id: tileId, message };
}

function intField(header: FrameHeader, field: string): number {
  const v = header[field];
  if (v === undefined) {
    throw new ProtocolError(
      `header ${JSON.stringify(header)} missing field '${field}'`);
  }
  const n = Math.trunc(Number(v));
  if (!Number.isFinite(n)) {
    throw new ProtocolError(`header field '${field}' is not a number`);
  }
  return n;
}

/** Payload bytes implied by a header; 0 for control frames. */
export function payloadSize(header: FrameHeader): number {
  const kind = header.type;
  if (kind === "predict") {
    if (header.dtype !== "f32") {
      throw new ProtocolError(
        `predict dtype must be f32, got ${JSON.stringify(header.dtype)}`);
    }
    const n = intField(header, "channels") * intField(header, "height")
      * intField(header, "width");
    if (n <= 0) {
      throw new ProtocolError(
        `bad predict dimensions in ${JSON.stringify(header)}`);
    }
    return n * 4;
  }
  if (kind === "labels") {
    if (header.dtype !== "u8") {
      throw new ProtocolError(
        `labels dtype must be u8, got ${JSON.stringify(header.dtype)}`);
    }
    const n = intField(header, "height") * intField(header, "width");
    if (n <= 0) {
      throw new ProtocolError(
        `bad labels dimensions in ${JSON.stringify(header)}`);
    }
    return n;
  }
  return 0;
}

export function encodeFrame(
  header: FrameHeader, payload: Buffer = Buffer.alloc(0),
): Buffer {
  const raw = Buffer.from(JSON.stringify(header), "utf-8");
  const len = Buffer.alloc(4);
  len.writeUInt32LE(raw.length, 0);
  return Buffer.concat([len, raw, payload]);
}

/** Write one frame; resolves once the bytes are handed to the pipe. */
export function writeFrame(
  stream: NodeJS.WritableStream,
  header: FrameHeader,
  payload: Buffer = Buffer.alloc(0),
): Promise<void> {
  return new Promise((resolve, reject) => {
    stream.write(encodeFrame(header, payload),
      (err) => (err ? reject(err) : resolve()));
  });
}

/**
 * Reads frames from a chunked byte source, tracking the absolute
 * offset so errors can name the exact byte where the conversation
 * broke.
 */
export class FrameReader {
  offset = 0;

  private chunks: Buffer[] = [];
  private buffered = 0;
  private iter: AsyncIterator<Buffer>;

  constructor(source: AsyncIterable<Buffer>) {
    this.iter = source[Symbol.asyncIterator]();
  }

  private async fill(n: number, what: string): Promise<void> {
    while (this.buffered < n) {
      const { value, done } = await this.iter.next();
      if (done || value === undefined) {
        throw new EndOfStream(
          `stream closed while reading ${what} at byte offset `
          + `${this.offset} (${this.buffered} of ${n} bytes)`);
      }
      const chunk = Buffer.isBuffer(value) ? value : Buffer.from(value);
      if (chunk.length > 0) {
        this.chunks.push(chunk);
        this.buffered += chunk.length;
      }
    }
  }

  private take(n: number): Buffer {
    const out = Buffer.alloc(n);
    let copied = 0;
    while (copied < n) {
      const head = this.chunks[0];
      const want = n - copied;
      if (head.length <= want) {
        head.copy(out, copied);
        copied += head.length;
        this.chunks.shift();
      } else {
        head.copy(out, copied, 0, want);
        this.chunks[0] = head.subarray(want);
        copied += want;
      }
    }
    this.buffered -= n;
    this.offset += n;
    return out;
  }

  async readExact(n: number, what: string): Promise<Buffer> {
    await this.fill(n, what);
    return this.take(n);
  }

  /**
   * Returns [header, payload], or null on a clean EOF at a frame
   * boundary when eofOk is set; a torn frame always throws.
   */
  async readFrame(eofOk = false): Promise<[FrameHeader, Buffer] | null> {
    const start = this.offset;
    let rawLen: Buffer;
    try {
      rawLen = await this.readExact(4, "frame length");
    } catch (e) {
      if (eofOk && e instanceof EndOfStream && this.buffered === 0
          && this.offset === start) {
        return null;
      }
      throw e;
    }
    const hlen = rawLen.readUInt32LE(0);
    if (hlen === 0 || hlen > MAX_HEADER_BYTES) {
      throw new ProtocolError(
        `implausible header length ${hlen} at byte offset ${start}`);
    }
    const raw = await this.readExact(hlen, "frame header");
    let parsed: unknown;
    try {
      parsed = JSON.parse(raw.toString("utf-8"));
    } catch (e) {
      throw new ProtocolError(
        `malformed frame header at byte offset ${start + 4}: `
        + `${(e as Error).message}`);
    }
    if (typeof parsed !== "object" || parsed === null || Array.isArray(parsed)
        || !("type" in parsed)) {
      throw new ProtocolError(
        `frame header at byte offset ${start + 4} has no type`);
    }
    const header = parsed as FrameHeader;
    const size = payloadSize(header);
    if (size > MAX_PAYLOAD_BYTES) {
      throw new ProtocolError(`payload of ${size} bytes exceeds limit`);
    }
    const payload = size > 0
      ? await this.readExact(size, `${header.type} payload`)
      : Buffer.alloc(0);
    return [header, payload];
  }
}

/** Copy the raw payload into an aligned little-endian float array. */
export function decodePredictPayload(
  payload: Buffer, channels: number, height: number, width: number,
): Float32Array {
  // typed-array views need 4-byte alignment that Buffer slices lack,
  // so copy; Float32Array byte order is the platform's, and every
  // supported target (x64, arm64) is little-endian like the wire
  const out = new Float32Array(channels * height * width);
  new Uint8Array(out.buffer).set(payload);
  return out;
}

/**
 * Child-side loop: handshake, then answer predicts until bye or EOF.
 *
 * Exceptions inside the model are reported as error frames carrying
 * the in-flight id and the loop continues; a broken stream or a bad
 * handshake throws. Returns the number of tiles served.
 */
export async function serve(
  model: TileModel,
  stdin: AsyncIterable<Buffer>,
  stdout: NodeJS.WritableStream,
): Promise<number> {
  const reader = new FrameReader(stdin);
  const first = await reader.readFrame();
  const hello = first![0];
  if (hello.type !== "hello") {
    throw new ProtocolError(
      `expected hello, got ${JSON.stringify(hello.type)}`);
  }
  if (hello.version !== VERSION) {
    await writeFrame(stdout, errorHeader(
      null, `unsupported protocol version ${hello.version}`));
    throw new ProtocolError(
      `unsupported protocol version ${hello.version}`);
  }
  await writeFrame(stdout, helloReplyHeader());
  let served = 0;
  for (;;) {
    const frame = await reader.readFrame(true);
    if (frame === null) {
      return served; // clean EOF between frames
    }
    const [header, payload] = frame;
    if (header.type === "bye") {
      return served;
    }
    const tileId = (header.id ?? null) as number | null;
    if (header.type !== "predict") {
      await writeFrame(stdout, errorHeader(
        tileId, `unexpected frame type ${JSON.stringify(header.type)}`));
      continue;
    }
    // dimensions were validated by payloadSize() during the read
    const channels = header.channels as number;
    const height = header.height as number;
    const width = header.width as number;
    let labels: Uint8Array;
    try {
      const tile = decodePredictPayload(payload, channels, height, width);
      labels = model(tile, channels, height, width);
      if (labels.length !== height * width) {
        throw new Error(
          `model returned ${labels.length} labels, tile is `
          + `${height}x${width}`);
      }
    } catch (e) {
      await writeFrame(stdout, errorHeader(
        tileId, e instanceof Error ? e.message : String(e)));
      continue;
    }
    await writeFrame(
      stdout, labelsHeader(tileId, height, width),
      Buffer.from(labels.buffer, labels.byteOffset, labels.byteLength));
    served += 1;
  }
}
