import { describe, expect, it } from "vitest";

import { LatestGate } from "../src/latest.js";

describe("LatestGate", () => {
  it("treats only the newest token as current", () => {
    const gate = new LatestGate();

    const first = gate.issue();
    expect(gate.isCurrent(first)).toBe(true);

    const second = gate.issue();
    expect(gate.isCurrent(second)).toBe(true);
    expect(gate.isCurrent(first)).toBe(false);
  });

  it("issues strictly increasing tokens", () => {
    const gate = new LatestGate();
    const tokens = [gate.issue(), gate.issue(), gate.issue()];

    expect(tokens).toEqual([1, 2, 3]);
  });
});
