// Wire types, mirroring the orchestrator's JSON bodies (snake_case,
// bits/second and seconds on the wire).

export interface Offer {
  offer_id: string;
  domain: string;
  ingress: string;
  egress: string;
  delay_s: number;
  bandwidth_bps: number;
  cost: number;
  valid_until: number;
}

export type OffersByDomain = Record<string, Offer[]>;

export interface PathRow {
  path_id: string;
  offers: string[];
  endpoint_domains: [string, string];
  total_delay_s: number;
  bottleneck_bps: number;
  state: string;
  flagged: boolean;
}

export interface MonitoringReport {
  domain: string;
  offer_id: string;
  window_s: number;
  measured_delay_s: number | null;
  delivered_ratio: number;
  alarms: string[];
  received_at?: number;
}

export interface DomainDescriptor {
  domain: string;
  kind: string;
  gateways: string[];
  peerings: { gateway: string; remote_domain: string; remote_gateway: string }[];
}

export interface PathRequestForm {
  src_domain: string;
  dst_domain: string;
  delay_budget_ms: number;
  bandwidth_mbps: number;
}

export interface PollSnapshot {
  offers: OffersByDomain;
  paths: PathRow[];
  reports: MonitoringReport[];
}
