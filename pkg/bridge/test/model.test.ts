import { describe, expect, it } from "vitest";

import { MASKED, VlmcModel, type Cell } from "../src/model.js";

function flipChain(p: number): VlmcModel {
  return new VlmcModel(2, 1, [
    [1 - p, p],
    [p, 1 - p],
  ]);
}

describe("stationary distribution", () => {
  it("is uniform for the symmetric flip chain", () => {
    const m = flipChain(0.1);
    expect(m.stationary[0]).toBeCloseTo(0.5, 11);
    expect(m.stationary[1]).toBeCloseTo(0.5, 11);
  });

  it("solves the asymmetric two-state chain", () => {
    const m = new VlmcModel(2, 1, [
      [0.9, 0.1],
      [0.2, 0.8],
    ]);
    expect(m.stationary[0]).toBeCloseTo(2 / 3, 9);
    expect(m.stationary[1]).toBeCloseTo(1 / 3, 9);
  });
});

describe("conditionals", () => {
  it("uses the transition row when the left neighbor is revealed", () => {
    const m = flipChain(0.1);
    const cells: Cell[] = [0, MASKED, MASKED];
    const cond = m.conditionals(cells, [1]).get(1)!;
    expect(cond[0]).toBeCloseTo(0.9, 12);
    expect(cond[1]).toBeCloseTo(0.1, 12);
  });

  it("applies Bayes when only the right neighbor is revealed", () => {
    const m = flipChain(0.1);
    const cells: Cell[] = [MASKED, MASKED, 0];
    const cond = m.conditionals(cells, [1]).get(1)!;
    expect(cond[0]).toBeCloseTo(0.9, 12);
  });

  it("interpolates between two revealed neighbors", () => {
    // P(X1 = 0 | X0 = 0, X2 = 0) = (1-p)^2 / ((1-p)^2 + p^2)
    const p = 0.2;
    const m = flipChain(p);
    const cells: Cell[] = [0, MASKED, 0];
    const cond = m.conditionals(cells, [1]).get(1)!;
    const want = ((1 - p) ** 2) / ((1 - p) ** 2 + p ** 2);
    expect(cond[0]).toBeCloseTo(want, 12);
  });

  it("ignores context for an iid chain", () => {
    const m = new VlmcModel(2, 1, [
      [0.3, 0.7],
      [0.3, 0.7],
    ]);
    const cells: Cell[] = [1, MASKED, 0, MASKED];
    const conds = m.conditionals(cells, [1, 3]);
    expect(conds.get(1)![0]).toBeCloseTo(0.3, 12);
    expect(conds.get(3)![1]).toBeCloseTo(0.7, 12);
  });

  it("handles order-2 contexts", () => {
    // deterministic-ish order-2 chain: next symbol likely equals the symbol
    // two steps back; revealing cells 0 and 1 pins the context
    const rows: number[][] = [];
    for (let c = 0; c < 4; c += 1) {
      const older = c >> 1;
      rows.push(older === 0 ? [0.8, 0.2] : [0.2, 0.8]);
    }
    const m = new VlmcModel(2, 2, rows);
    const cond = m.conditionals([1, 0, MASKED], [2]).get(2)!;
    expect(cond[1]).toBeCloseTo(0.8, 12);
  });

  it("rejects queries on revealed positions", () => {
    const m = flipChain(0.3);
    expect(() => m.conditionals([0, MASKED], [0])).toThrow(/not masked/);
  });
});

describe("document loading", () => {
  it("round-trips a valid document", () => {
    const m = VlmcModel.fromDoc({
      alphabet: 2,
      order: 1,
      transitions: { "0": [0.8, 0.2], "1": [0.3, 0.7] },
    });
    expect(m.nContexts).toBe(2);
    expect(m.transitions[1][0]).toBe(0.3);
  });

  it("rejects missing contexts and bad rows", () => {
    expect(() =>
      VlmcModel.fromDoc({ alphabet: 2, order: 1, transitions: { "0": [0.5, 0.5] } }),
    ).toThrow(/expected 2 context rows/);
    expect(() =>
      VlmcModel.fromDoc({
        alphabet: 2,
        order: 1,
        transitions: { "0": [0.6, 0.5], "1": [0.5, 0.5] },
      }),
    ).toThrow(/sums to/);
  });
});
