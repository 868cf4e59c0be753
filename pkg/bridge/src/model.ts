/**
 * Finite-order Markov chain with exact conditionals for masked sequences.
 *
 * Mirrors the engine-side oracle math: states are length-L contexts, a
 * forward-backward sweep over the context chain yields the conditional
 * distribution of every masked position given all revealed cells.
 */

export interface ModelDoc {
  alphabet: number;
  order: number;
  transitions: Record<string, number[]>;
}

export const MASKED = null;
export type Cell = number | null;

const ROW_SUM_TOL = 1e-12;
const POWER_ITER_RESIDUAL = 1e-12;

export class VlmcModel {
  readonly alphabet: number;
  readonly order: number;
  readonly nContexts: number;
  /** transitions[c][v] = P(next symbol = v | context index c) */
  readonly transitions: number[][];
  /** shift[c][v] = context index after appending v to context c */
  readonly shift: number[][];
  readonly stationary: number[];

  constructor(alphabet: number, order: number, transitions: number[][]) {
    if (!Number.isInteger(alphabet) || alphabet < 2) {
      throw new Error(`alphabet size must be an integer >= 2, got ${alphabet}`);
    }
    if (!Number.isInteger(order) || order < 1) {
      throw new Error(`order must be an integer >= 1, got ${order}`);
    }
    const nCtx = alphabet ** order;
    if (transitions.length !== nCtx) {
      throw new Error(`expected ${nCtx} context rows, got ${transitions.length}`);
    }
    for (const [c, row] of transitions.entries()) {
      if (row.length !== alphabet) {
        throw new Error(`row ${c} has ${row.length} entries, expected ${alphabet}`);
      }
      let sum = 0;
      for (const p of row) {
        if (!(p >= 0)) throw new Error(`negative probability in row ${c}`);
        sum += p;
      }
      if (Math.abs(sum - 1) > ROW_SUM_TOL) {
        throw new Error(`row ${c} sums to ${sum}, not 1`);
      }
    }
    this.alphabet = alphabet;
    this.order = order;
    this.nContexts = nCtx;
    this.transitions = transitions;
    this.shift = Array.from({ length: nCtx }, (_, c) =>
      Array.from({ length: alphabet }, (_, v) => (c * alphabet + v) % nCtx),
    );
    this.stationary = this.computeStationary();
  }

  static fromDoc(doc: ModelDoc): VlmcModel {
    const { alphabet, order } = doc;
    const nCtx = alphabet ** order;
    const rows: number[][] = Array.from({ length: nCtx }, () => []);
    let seen = 0;
    for (const [ctxStr, probs] of Object.entries(doc.transitions)) {
      if (ctxStr.length !== order) {
        throw new Error(`context "${ctxStr}" does not have ${order} symbols`);
      }
      let idx = 0;
      for (const ch of ctxStr) {
        const s = Number(ch);
        if (!Number.isInteger(s) || s < 0 || s >= alphabet) {
          throw new Error(`context "${ctxStr}" outside alphabet`);
        }
        idx = idx * alphabet + s;
      }
      if (rows[idx].length) throw new Error(`duplicate context "${ctxStr}"`);
      rows[idx] = probs.slice();
      seen += 1;
    }
    if (seen !== nCtx) throw new Error(`expected ${nCtx} context rows, got ${seen}`);
    return new VlmcModel(alphabet, order, rows);
  }

  private computeStationary(): number[] {
    const n = this.nContexts;
    let pi = new Array<number>(n).fill(1 / n);
    for (let iter = 0; iter < 200_000; iter += 1) {
      const next = new Array<number>(n).fill(0);
      for (let c = 0; c < n; c += 1) {
        const w = pi[c];
        if (w === 0) continue;
        const row = this.transitions[c];
        const shift = this.shift[c];
        for (let v = 0; v < this.alphabet; v += 1) {
          next[shift[v]] += w * row[v];
        }
      }
      let total = 0;
      for (const x of next) total += x;
      let delta = 0;
      for (let c = 0; c < n; c += 1) {
        next[c] /= total;
        delta = Math.max(delta, Math.abs(next[c] - pi[c]));
      }
      pi = next;
      if (delta < POWER_ITER_RESIDUAL) return pi;
    }
    throw new Error("power iteration did not converge; chain near reducible");
  }

  /** One forward step of the context distribution given one cell. */
  private stepForward(alpha: number[], cell: Cell): number[] {
    const next = new Array<number>(this.nContexts).fill(0);
    for (let c = 0; c < this.nContexts; c += 1) {
      const w = alpha[c];
      if (w === 0) continue;
      const row = this.transitions[c];
      const shift = this.shift[c];
      if (cell === MASKED) {
        for (let v = 0; v < this.alphabet; v += 1) next[shift[v]] += w * row[v];
      } else {
        next[shift[cell]] += w * row[cell];
      }
    }
    return normalized(next, "revealed pattern has probability zero under the model");
  }

  private stepBackward(beta: number[], cell: Cell): number[] {
    const prev = new Array<number>(this.nContexts).fill(0);
    for (let c = 0; c < this.nContexts; c += 1) {
      const row = this.transitions[c];
      const shift = this.shift[c];
      if (cell === MASKED) {
        let acc = 0;
        for (let v = 0; v < this.alphabet; v += 1) acc += row[v] * beta[shift[v]];
        prev[c] = acc;
      } else {
        prev[c] = row[cell] * beta[shift[cell]];
      }
    }
    return normalized(prev, "revealed pattern has probability zero under the model");
  }

  /**
   * Conditional distribution of each requested masked position given every
   * revealed cell, via one forward and one backward pass.
   */
  conditionals(cells: Cell[], positions: number[]): Map<number, number[]> {
    for (const p of positions) {
      if (p < 0 || p >= cells.length) throw new Error(`position ${p} outside sequence`);
      if (cells[p] !== MASKED) throw new Error(`position ${p} is not masked`);
    }
    if (positions.length === 0) return new Map();

    let lastRevealed = -1;
    for (let i = 0; i < cells.length; i += 1) if (cells[i] !== MASKED) lastRevealed = i;
    const end = Math.max(Math.max(...positions), lastRevealed);

    const alphas: number[][] = [this.stationary.slice()];
    for (let p = 0; p <= end; p += 1) {
      alphas.push(this.stepForward(alphas[p], cells[p]));
    }
    const betas: number[][] = new Array(end + 2);
    betas[end + 1] = new Array<number>(this.nContexts).fill(1);
    for (let p = end; p >= 0; p -= 1) {
      betas[p] = this.stepBackward(betas[p + 1], cells[p]);
    }

    const out = new Map<number, number[]>();
    for (const p of positions) {
      const alpha = alphas[p];
      const betaNext = betas[p + 1];
      const cond = new Array<number>(this.alphabet).fill(0);
      for (let c = 0; c < this.nContexts; c += 1) {
        const w = alpha[c];
        if (w === 0) continue;
        const row = this.transitions[c];
        const shift = this.shift[c];
        for (let v = 0; v < this.alphabet; v += 1) {
          cond[v] += w * row[v] * betaNext[shift[v]];
        }
      }
      out.set(p, normalized(cond, `position ${p} has no consistent completion`));
    }
    return out;
  }
}

function normalized(vec: number[], zeroMessage: string): number[] {
  let total = 0;
  for (const x of vec) total += x;
  if (!(total > 0)) throw new Error(zeroMessage);
  return vec.map((x) => x / total);
}
