/**
 * Bridge entry point: serve tile predictions over stdio.
 *
 * Usage: node dist/main.js [--model threshold|network] [--k 9]
 *
 * Exit codes: 0 after bye or clean EOF, 1 on a broken conversation
 * (one best-effort error frame is emitted first), 2 on bad usage.
 */

import { parseArgs } from "node:util";

import { networkStub, thresholdModel } from "./models";
import { TileModel, encodeFrame, errorHeader, serve } from "./protocol";

const MODELS: Record<string, (k: number) => TileModel> = {
  threshold: thresholdModel,
  network: networkStub,
};

function usage(message: string): never {
  process.stderr.write(`extbridge: ${message}\n`);
  process.exit(2);
}

function buildModel(argv: string[]): TileModel {
  let values: { model?: string; k?: string };
  try {
    ({ values } = parseArgs({
      args: argv,
      options: {
        model: { type: "string", default: "threshold" },
        k: { type: "string", default: "9" },
      },
    }));
  } catch (e) {
    usage(e instanceof Error ? e.message : String(e));
  }
  const k = Number(values.k);
  if (!Number.isInteger(k) || k < 2 || k > 255) {
    usage(`--k must be an integer in 2..255, got '${values.k}'`);
  }
  const make = MODELS[values.model as string];
  if (!make) {
    usage(`--model must be one of ${Object.keys(MODELS).join(", ")}, `
      + `got '${values.model}'`);
  }
  return make(k);
}

async function main(): Promise<void> {
  const model = buildModel(process.argv.slice(2));
  await serve(model, process.stdin, process.stdout);
}

main().then(
  () => process.exit(0),
  (err) => {
    const message = err instanceof Error ? err.message : String(err);
    process.stderr.write(`extbridge: ${message}\n`);
    const frame = encodeFrame(errorHeader(null, message));
    // exit only once the error frame reached the pipe
    process.stdout.write(frame, () => process.exit(1));
    setTimeout(() => process.exit(1), 2000).unref();
  },
);
