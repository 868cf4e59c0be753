/**
 * Reference denoiser server: answers conditional-distribution requests for
 * the masked positions of a block, backed by an exact chain model.
 *
 * One connection serves one generation: the handshake goes out first, every
 * request gets exactly one response with full probability vectors (mask slot
 * zero), and any protocol violation produces an error line and closes the
 * stream.  Swap `VlmcModel` for a real masked-diffusion model by providing
 * anything with the same `conditionals(cells, positions)` shape.
 */

import { createInterface } from "node:readline";
import { createServer, type Server, type Socket } from "node:net";
import type { Readable, Writable } from "node:stream";

import { MASKED, type Cell, VlmcModel } from "./model.js";
import { errorLine, helloLine, parseRequest, responseLine } from "./protocol.js";

export interface ConditionalModel {
  alphabet: number;
  conditionals(cells: Cell[], positions: number[]): Map<number, number[]>;
}

export interface ServeOptions {
  eosId?: number | null;
}

export class BridgeSession {
  private readonly model: ConditionalModel;
  private readonly out: Writable;
  private closed = false;

  constructor(model: ConditionalModel, out: Writable, options: ServeOptions = {}) {
    this.model = model;
    this.out = out;
    const vocab = model.alphabet + 1; // alphabet symbols plus the mask slot
    this.write(helloLine({
      vocab,
      mask_id: model.alphabet,
      eos_id: options.eosId ?? null,
    }));
  }

  get isClosed(): boolean {
    return this.closed;
  }

  /** Handle one request line; returns false when the session must close. */
  handleLine(line: string): boolean {
    if (this.closed || line.trim() === "") return !this.closed;
    let id: number | null = null;
    try {
      const req = parseRequest(line);
      id = req.id;
      const cells: Cell[] = req.tokens.map((t) => (t === null ? MASKED : t));
      for (const p of req.positions) {
        if (p < 0 || p >= cells.length) throw new Error(`position ${p} outside sequence`);
        if (cells[p] !== MASKED) throw new Error(`position ${p} is not masked`);
      }
      const conds = this.model.conditionals(cells, req.positions);
      const padded = new Map<number, number[]>();
      for (const [pos, vec] of conds) padded.set(pos, [...vec, 0]);
      this.write(responseLine(req.id, padded));
      return true;
    } catch (err) {
      this.write(errorLine(id, err instanceof Error ? err.message : String(err)));
      this.closed = true;
      return false;
    }
  }

  private write(line: string): void {
    this.out.write(line + "\n");
  }
}

/** Serve one session over arbitrary streams; resolves at EOF or violation. */
export function serveStreams(
  model: ConditionalModel,
  input: Readable,
  output: Writable,
  options: ServeOptions = {},
): Promise<void> {
  const session = new BridgeSession(model, output, options);
  const lines = createInterface({ input, crlfDelay: Infinity });
  return new Promise((resolve) => {
    lines.on("line", (line) => {
      if (!session.handleLine(line)) {
        lines.close();
        resolve();
      }
    });
    lines.on("close", () => resolve());
  });
}

export function serveStdio(model: VlmcModel, options: ServeOptions = {}): Promise<void> {
  return serveStreams(model, process.stdin, process.stdout, options);
}

/** TCP mode: a fresh session per connection, one connection per generation. */
export function serveTcp(
  model: VlmcModel,
  port: number,
  options: ServeOptions = {},
): Promise<Server> {
  const server = createServer((socket: Socket) => {
    void serveStreams(model, socket, socket, options).then(() => socket.end());
  });
  return new Promise((resolve, reject) => {
    server.once("error", reject);
    server.listen(port, "127.0.0.1", () => resolve(server));
  });
}
