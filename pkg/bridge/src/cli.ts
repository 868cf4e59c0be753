/**
 * Entry point: `node dist/cli.js MODEL_JSON [--stdio | --port N] [--eos N]`.
 *
 * Stdio mode serves a single session on the process streams (the engine
 * launches one process per generation); TCP mode accepts one session per
 * connection.
 */

import { readFileSync } from "node:fs";

import { VlmcModel, type ModelDoc } from "./model.js";
import { serveStdio, serveTcp } from "./server.js";

function usage(): never {
  process.stderr.write(
    "usage: cli.js MODEL_JSON [--stdio | --port N] [--eos N]\n",
  );
  process.exit(1);
}

async function main(argv: string[]): Promise<void> {
  if (argv.length < 1) usage();
  const modelPath = argv[0];
  let port: number | null = null;
  let eosId: number | null = null;
  for (let i = 1; i < argv.length; i += 1) {
    const arg = argv[i];
    if (arg === "--stdio") {
      port = null;
    } else if (arg === "--port") {
      port = Number(argv[++i]);
      if (!Number.isInteger(port) || port < 0) usage();
    } else if (arg === "--eos") {
      eosId = Number(argv[++i]);
      if (!Number.isInteger(eosId) || eosId < 0) usage();
    } else {
      usage();
    }
  }

  const doc = JSON.parse(readFileSync(modelPath, "utf-8")) as ModelDoc;
  const model = VlmcModel.fromDoc(doc);
  if (port === null) {
    await serveStdio(model, { eosId });
  } else {
    const server = await serveTcp(model, port, { eosId });
    const addr = server.address();
    const bound = typeof addr === "object" && addr ? addr.port : port;
    process.stderr.write(`listening on 127.0.0.1:${bound}\n`);
  }
}

main(process.argv.slice(2)).catch((err) => {
  process.stderr.write(`fatal: ${err instanceof Error ? err.message : err}\n`);
  process.exit(1);
});
