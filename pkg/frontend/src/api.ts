// Typed client for the orchestrator endpoints. Every displayed value in the
// portal originates from one of these GET responses; the portal never
// fabricates state client-side.

import type {
  DomainDescriptor,
  MonitoringReport,
  Offer,
  OffersByDomain,
  PathRequestForm,
  PathRow,
  PollSnapshot,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
    public requestId: string,
  ) {
    super(`[${status}] ${detail} (request ${requestId})`);
  }
}

export class QorApi {
  token: string | null = null;
  private nextRequest = 1;

  constructor(public base: string = "") {}

  private async call(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<any> {
    const headers: Record<string, string> = {
      "Content-Type": "application/json",
      "X-Request-Id": `portal-${Date.now()}-${this.nextRequest++}`,
    };
    if (this.token) {
      headers["Authorization"] = `Bearer ${this.token}`;
    }
    const resp = await fetch(this.base + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const payload = await resp.json();
    if (!resp.ok) {
      throw new ApiError(
        resp.status,
        payload.detail ?? payload.error ?? "request failed",
        payload.request_id ?? "?",
      );
    }
    return payload;
  }

  async login(username: string, password: string): Promise<string> {
    const out = await this.call("POST", "/qor/auth", { username, password });
    this.token = out.token;
    return out.token;
  }

  async registerDomain(descriptor: DomainDescriptor): Promise<string> {
    const out = await this.call("POST", "/qor/domains", descriptor);
    return out.registration_id;
  }

  async announceOffers(domain: string, offers: Offer[]): Promise<void> {
    await this.call("PUT", `/qor/domains/${domain}/offers`, { offers });
  }

  async requestPath(form: PathRequestForm): Promise<PathRow | null> {
    const out = await this.call("POST", "/qor/paths", form);
    return out.path;
  }

  async instantiate(
    pathId: string,
    flowSrc?: string,
    flowDst?: string,
  ): Promise<PathRow> {
    const out = await this.call("POST", `/qor/paths/${pathId}/instantiate`, {
      flow_src: flowSrc,
      flow_dst: flowDst,
    });
    return out.path;
  }

  async reportMonitoring(report: MonitoringReport): Promise<void> {
    await this.call("POST", "/qor/monitoring", report);
  }

  async listOffers(): Promise<OffersByDomain> {
    return (await this.call("GET", "/qor/offers")).offers;
  }

  async listPaths(): Promise<PathRow[]> {
    return (await this.call("GET", "/qor/paths")).paths;
  }

  async recentMonitoring(): Promise<MonitoringReport[]> {
    return (await this.call("GET", "/qor/monitoring/recent")).reports;
  }

  async poll(): Promise<PollSnapshot> {
    const [offers, paths, reports] = await Promise.all([
      this.listOffers(),
      this.listPaths(),
      this.recentMonitoring(),
    ]);
    return { offers, paths, reports };
  }
}
