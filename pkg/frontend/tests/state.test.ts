import { describe, expect, it } from "vitest";
import { PortalState, pollOnce } from "../src/state.js";
import type { QorApi } from "../src/api.js";
import type { PollSnapshot } from "../src/types.js";

const snapshot = (flagged = false): PollSnapshot => ({
  offers: { nsp1: [] },
  paths: [
    {
      path_id: "p1",
      offers: ["o1", "o2"],
      endpoint_domains: ["a", "b"],
      total_delay_s: 0.01,
      bottleneck_bps: 1e6,
      state: "active",
      flagged,
    },
  ],
  reports: [],
});

describe("PortalState", () => {
  it("tracks last success and staleness", () => {
    const state = new PortalState();
    expect(state.stale(1000, 2000)).toBe(true);
    state.apply(snapshot(), 1000);
    expect(state.stale(1500, 2000)).toBe(false);
    expect(state.stale(1000 + 4001, 2000)).toBe(true);
  });

  it("keeps stale data on failure but records the error", () => {
    const state = new PortalState();
    state.apply(snapshot(), 1000);
    state.fail(new Error("boom"), 3000);
    expect(state.paths.length).toBe(1);
    expect(state.lastError).toContain("boom");
    expect(state.lastSuccess).toBe(1000);
  });

  it("collects flagged offer ids from flagged paths", () => {
    const state = new PortalState();
    state.apply(snapshot(true), 1000);
    expect([...state.flaggedOfferIds()].sort()).toEqual(["o1", "o2"]);
  });
});

describe("pollOnce", () => {
  it("applies a successful poll", async () => {
    const api = { poll: async () => snapshot() } as unknown as QorApi;
    const state = new PortalState();
    await pollOnce(api, state, 42);
    expect(state.lastSuccess).toBe(42);
    expect(state.paths[0].path_id).toBe("p1");
  });

  it("records failures without clearing data", async () => {
    const api = {
      poll: async () => {
        throw new Error("`service down`");
      },
    } as unknown as QorApi;
    const state = new PortalState();
    state.apply(snapshot(), 10);
    await pollOnce(api, state, 50);
    expect(state.lastError).toContain("service down");
    expect(state.lastSuccess).toBe(10);
  });
});
