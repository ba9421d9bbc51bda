// DOM table renderers. Pure functions from API data to elements so they can
// be unit-tested under jsdom without a running service.

import type {
  MonitoringReport,
  OffersByDomain,
  PathRow,
} from "./types.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function headerRow(labels: string[]): HTMLTableRowElement {
  const tr = el("tr");
  for (const label of labels) tr.appendChild(el("th", undefined, label));
  return tr;
}

export function ms(seconds: number | null): string {
  return seconds === null ? "-" : `${(seconds * 1e3).toFixed(3)} ms`;
}

export function mbps(bps: number): string {
  return `${(bps / 1e6).toFixed(1)} Mbps`;
}

export function renderDomainsTable(
  domains: Record<string, string>,
): HTMLTableElement {
  const table = el("table", "domains");
  table.appendChild(headerRow(["domain", "registration"]));
  for (const domain of Object.keys(domains).sort()) {
    const tr = el("tr");
    tr.appendChild(el("td", undefined, domain));
    tr.appendChild(el("td", undefined, domains[domain]));
    table.appendChild(tr);
  }
  return table;
}

export function renderOffersTable(
  offers: OffersByDomain,
  flagged: Set<string> = new Set(),
): HTMLTableElement {
  const table = el("table", "offers");
  table.appendChild(
    headerRow([
      "offer", "domain", "ingress", "egress", "delay", "bandwidth", "cost",
      "valid until",
    ]),
  );
  for (const domain of Object.keys(offers).sort()) {
    for (const offer of offers[domain]) {
      const tr = el("tr", flagged.has(offer.offer_id) ? "flagged" : "");
      tr.dataset.offerId = offer.offer_id;
      tr.appendChild(el("td", undefined, offer.offer_id));
      tr.appendChild(el("td", undefined, offer.domain));
      tr.appendChild(el("td", undefined, offer.ingress));
      tr.appendChild(el("td", undefined, offer.egress));
      tr.appendChild(el("td", undefined, ms(offer.delay_s)));
      tr.appendChild(el("td", undefined, mbps(offer.bandwidth_bps)));
      tr.appendChild(el("td", undefined, String(offer.cost)));
      tr.appendChild(el("td", undefined, String(offer.valid_until)));
      table.appendChild(tr);
    }
  }
  return table;
}

export function renderPathsTable(
  paths: PathRow[],
  onInstantiate?: (pathId: string) => void,
): HTMLTableElement {
  const table = el("table", "paths");
  table.appendChild(
    headerRow([
      "path", "endpoints", "offers", "total delay", "bottleneck", "state", "",
    ]),
  );
  for (const path of paths) {
    const tr = el("tr", path.flagged ? "flagged" : "");
    tr.dataset.pathId = path.path_id;
    tr.dataset.state = path.state;
    tr.appendChild(el("td", undefined, path.path_id));
    tr.appendChild(
      el("td", undefined, `${path.endpoint_domains[0]} -> ${path.endpoint_domains[1]}`),
    );
    tr.appendChild(el("td", undefined, path.offers.join(", ")));
    tr.appendChild(el("td", undefined, ms(path.total_delay_s)));
    tr.appendChild(el("td", undefined, mbps(path.bottleneck_bps)));
    tr.appendChild(el("td", "state", path.state));
    const actions = el("td");
    if (path.state === "computed" && onInstantiate) {
      const button = el("button", "instantiate", "Instantiate");
      button.addEventListener("click", () => onInstantiate(path.path_id));
      actions.appendChild(button);
    }
    tr.appendChild(actions);
    table.appendChild(tr);
  }
  return table;
}

export function renderMonitoringFeed(
  reports: MonitoringReport[],
  advertisedDelay: (offerId: string) => number | null,
): HTMLTableElement {
  const table = el("table", "monitoring");
  table.appendChild(
    headerRow([
      "domain", "offer", "measured", "advertised", "delivered", "alarms",
    ]),
  );
  for (const report of [...reports].reverse()) {
    const hasAlarm = report.alarms.length > 0;
    const advertised = advertisedDelay(report.offer_id);
    const breach =
      report.measured_delay_s !== null &&
      advertised !== null &&
      report.measured_delay_s > advertised;
    const tr = el("tr", hasAlarm || breach ? "alarm" : "");
    tr.dataset.offerId = report.offer_id;
    tr.appendChild(el("td", undefined, report.domain));
    tr.appendChild(el("td", undefined, report.offer_id));
    tr.appendChild(el("td", undefined, ms(report.measured_delay_s)));
    tr.appendChild(el("td", undefined, advertised === null ? "-" : ms(advertised)));
    tr.appendChild(
      el("td", undefined, `${(report.delivered_ratio * 100).toFixed(1)}%`),
    );
    tr.appendChild(el("td", "alarms", report.alarms.join(", ")));
    table.appendChild(tr);
  }
  return table;
}

export function renderStaleBanner(
  lastSuccess: number | null,
  lastError: string | null,
): HTMLElement {
  const banner = el("div", "banner stale");
  const since =
    lastSuccess === null
      ? "never"
      : new Date(lastSuccess).toISOString();
  banner.textContent =
    `service unreachable; showing stale data (last success: ${since})` +
    (lastError ? ` - ${lastError}` : "");
  return banner;
}

export function renderNotice(text: string, kind: string = "info"): HTMLElement {
  return el("div", `notice ${kind}`, text);
}
