import { describe, expect, it } from "vitest";
import {
  mbps,
  ms,
  renderMonitoringFeed,
  renderOffersTable,
  renderPathsTable,
  renderStaleBanner,
} from "../src/render.js";
import type { MonitoringReport, PathRow } from "../src/types.js";

const offer = (id: string, delay = 0.01) => ({
  offer_id: id,
  domain: "nsp1",
  ingress: "A",
  egress: "B",
  delay_s: delay,
  bandwidth_bps: 50e6,
  cost: 2,
  valid_until: 100,
});

const path = (id: string, state = "computed", flagged = false): PathRow => ({
  path_id: id,
  offers: ["nsp1:A->B"],
  endpoint_domains: ["park-a", "park-b"],
  total_delay_s: 0.01,
  bottleneck_bps: 50e6,
  state,
  flagged,
});

describe("formatting", () => {
  it("formats delays and rates", () => {
    expect(ms(0.0125)).toBe("12.500 ms");
    expect(ms(null)).toBe("-");
    expect(mbps(50e6)).toBe("50.0 Mbps");
  });
});

describe("offers table", () => {
  it("renders one row per offer with values from the API", () => {
    const table = renderOffersTable({ nsp1: [offer("o1"), offer("o2")] });
    const rows = table.querySelectorAll("tr[data-offer-id]");
    expect(rows.length).toBe(2);
    expect(rows[0].textContent).toContain("10.000 ms");
    expect(rows[0].textContent).toContain("50.0 Mbps");
  });

  it("highlights offers whose dependent paths are flagged", () => {
    const table = renderOffersTable(
      { nsp1: [offer("o1")] },
      new Set(["o1"]),
    );
    expect(table.querySelector("tr[data-offer-id='o1']")!.className).toBe(
      "flagged",
    );
  });
});

describe("paths table", () => {
  it("shows an instantiate action only for computed paths", () => {
    const clicked: string[] = [];
    const table = renderPathsTable(
      [path("p1", "computed"), path("p2", "active")],
      (id) => clicked.push(id),
    );
    const buttons = table.querySelectorAll("button.instantiate");
    expect(buttons.length).toBe(1);
    (buttons[0] as HTMLButtonElement).click();
    expect(clicked).toEqual(["p1"]);
  });

  it("marks flagged paths", () => {
    const table = renderPathsTable([path("p1", "active", true)]);
    expect(table.querySelector("tr[data-path-id='p1']")!.className).toBe(
      "flagged",
    );
  });
});

describe("monitoring feed", () => {
  const report = (alarms: string[], measured: number | null): MonitoringReport => ({
    domain: "nsp1",
    offer_id: "o1",
    window_s: 1,
    measured_delay_s: measured,
    delivered_ratio: 1,
    alarms,
  });

  it("highlights alarm rows", () => {
    const table = renderMonitoringFeed(
      [report([], 0.001), report(["qos-threat"], 0.5)],
      () => 0.01,
    );
    const rows = table.querySelectorAll("tr[data-offer-id]");
    // feed renders newest first
    expect(rows[0].className).toBe("alarm");
    expect(rows[0].textContent).toContain("qos-threat");
    expect(rows[1].className).toBe("");
  });

  it("flags measured delay above the advertised delay", () => {
    const table = renderMonitoringFeed([report([], 0.02)], () => 0.01);
    const row = table.querySelector("tr[data-offer-id]")!;
    expect(row.className).toBe("alarm");
  });
});

describe("stale banner", () => {
  it("carries the last success timestamp", () => {
    const banner = renderStaleBanner(1700000000000, "connection refused");
    expect(banner.textContent).toContain("stale data");
    expect(banner.textContent).toContain("2023-11-14");
    expect(banner.textContent).toContain("connection refused");
  });
});
