import { spawnSync } from "node:child_process";
import { existsSync, readFileSync } from "node:fs";
import { fileURLToPath } from "node:url";
import { PassThrough } from "node:stream";
import * as path from "node:path";
import { describe, expect, it } from "vitest";

import { thresholdModel } from "../src/models";
import { FrameReader, encodeFrame, helloHeader, serve } from "../src/protocol";

const HERE = path.dirname(fileURLToPath(import.meta.url));
const DATA = path.resolve(HERE, "../../tests/data/protocol");
const DIST_MAIN = path.resolve(HERE, "../dist/main.js");

const sessionIn = readFileSync(path.join(DATA, "session.in"));
const sessionOut = readFileSync(path.join(DATA, "session.out"));

function runChild(args: string[], input: Buffer) {
  return spawnSync(process.execPath, [DIST_MAIN, ...args], {
    input,
    maxBuffer: 1 << 26,
  });
}

describe("golden transcript", () => {
  it("in-process serve reproduces the recorded session byte for byte",
      async () => {
    const stdin = new PassThrough();
    stdin.end(sessionIn);
    const stdout = new PassThrough();
    const chunks: Buffer[] = [];
    stdout.on("data", (c: Buffer) => chunks.push(c));
    const served = await serve(thresholdModel(9), stdin, stdout);
    expect(served).toBe(100);
    expect(Buffer.concat(chunks).equals(sessionOut)).toBe(true);
  });

  it("the built child process reproduces it too", () => {
    expect(existsSync(DIST_MAIN), "dist/main.js missing, run npm run build")
      .toBe(true);
    const proc = runChild(["--model", "threshold", "--k", "9"], sessionIn);
    expect(proc.status).toBe(0);
    expect(proc.stdout.equals(sessionOut)).toBe(true);
  });
});

describe("child process error behavior", () => {
  it("emits one error frame and exits 1 on a malformed frame", async () => {
    const input = Buffer.concat([
      encodeFrame(helloHeader(6, 8)),
      Buffer.from("garbage that is not a frame", "utf-8"),
    ]);
    const proc = runChild([], input);
    expect(proc.status).toBe(1);
    async function* once(): AsyncGenerator<Buffer> {
      yield proc.stdout;
    }
    const reader = new FrameReader(once());
    const hello = await reader.readFrame();
    expect(hello![0]).toMatchObject({ type: "hello", version: 1 });
    const error = await reader.readFrame();
    expect(error![0]).toMatchObject({ type: "error", id: null });
  });

  it("exits 2 on bad usage", () => {
    expect(runChild(["--model", "nonesuch"], Buffer.alloc(0)).status).toBe(2);
    expect(runChild(["--k", "1"], Buffer.alloc(0)).status).toBe(2);
    expect(runChild(["--bogus"], Buffer.alloc(0)).status).toBe(2);
  });
});
