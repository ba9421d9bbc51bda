// Poll-loop bookkeeping: the portal polls (never pushes) and shows a
// stale-data banner with the last-success timestamp when the service stops
// answering.

import type { QorApi } from "./api.js";
import type { PollSnapshot } from "./types.js";

export const DEFAULT_POLL_MS = 2000;

export class PortalState {
  offers: PollSnapshot["offers"] = {};
  paths: PollSnapshot["paths"] = [];
  reports: PollSnapshot["reports"] = [];
  lastSuccess: number | null = null;
  lastError: string | null = null;

  apply(snapshot: PollSnapshot, now: number): void {
    this.offers = snapshot.offers;
    this.paths = snapshot.paths;
    this.reports = snapshot.reports;
    this.lastSuccess = now;
    this.lastError = null;
  }

  fail(error: unknown, _now: number): void {
    this.lastError = error instanceof Error ? error.message : String(error);
  }

  stale(now: number, pollMs: number = DEFAULT_POLL_MS): boolean {
    if (this.lastSuccess === null) return true;
    return now - this.lastSuccess > 2 * pollMs;
  }

  // Offer ids whose dependent active paths are flagged, for highlighting.
  flaggedOfferIds(): Set<string> {
    const out = new Set<string>();
    for (const path of this.paths) {
      if (path.flagged) {
        for (const offerId of path.offers) out.add(offerId);
      }
    }
    return out;
  }
}

export async function pollOnce(
  api: QorApi,
  state: PortalState,
  now: number = Date.now(),
): Promise<void> {
  try {
    const snapshot = await api.poll();
    state.apply(snapshot, now);
  } catch (error) {
    state.fail(error, now);
  }
}

export function startPolling(
  api: QorApi,
  state: PortalState,
  onUpdate: () => void,
  pollMs: number = DEFAULT_POLL_MS,
): () => void {
  let stopped = false;
  const tick = async () => {
    if (stopped) return;
    await pollOnce(api, state);
    onUpdate();
  };
  void tick();
  const timer = setInterval(tick, pollMs);
  return () => {
    stopped = true;
    clearInterval(timer);
  };
}
