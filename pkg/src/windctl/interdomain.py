"""Inter-domain QoS orchestration.

Four-phase lifecycle: domain registration, full-state path-segment offer
announcement, constrained end-to-end chain computation over abstracted
offers, and two-phase instantiation with per-domain reserve/release. The
orchestrator sees border devices and offer QoS only; intra-domain node ids
never cross the boundary (all traffic crosses as plain dict messages, kept
in a log so tests can assert the hiding property).
"""

from __future__ import annotations

import heapq
import itertools
import time as _time
from dataclasses import dataclass, field

from .errors import ReserveFailedError, UnknownEntityError, WindctlError
from .netcalc import ArrivalCurve
from .pathing import FlowSpec
from .security import SecurityManager

OFFER_VALIDITY_S = 300.0


@dataclass
class PathSegmentOffer:
    offer_id: str
    domain: str
    ingress: str
    egress: str
    delay_s: float
    bandwidth_bps: float
    cost: float
    valid_until: float

    def __post_init__(self):
        if self.ingress == self.egress:
            raise WindctlError("offer ingress and egress must differ")
        if self.delay_s <= 0 or self.bandwidth_bps <= 0:
            raise WindctlError("offer delay and bandwidth must be positive")
        if self.cost < 0:
            raise WindctlError("offer cost must be non-negative")

    def to_dict(self) -> dict:
        return {
            "offer_id": self.offer_id,
            "domain": self.domain,
            "ingress": self.ingress,
            "egress": self.egress,
            "delay_s": self.delay_s,
            "bandwidth_bps": self.bandwidth_bps,
            "cost": self.cost,
            "valid_until": self.valid_until,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PathSegmentOffer":
        return cls(**doc)


@dataclass
class E2EPath:
    path_id: str
    offers: list[PathSegmentOffer]
    endpoint_domains: tuple[str, str]
    total_delay_s: float
    bottleneck_bps: float
    state: str = "computed"  # computed | reserved | active | torn-down
    requested_bps: float = 0.0
    flow: tuple[str, str] | None = None
    flagged: bool = False

    def to_dict(self) -> dict:
        return {
            "path_id": self.path_id,
            "offers": [o.offer_id for o in self.offers],
            "endpoint_domains": list(self.endpoint_domains),
            "total_delay_s": self.total_delay_s,
            "bottleneck_bps": self.bottleneck_bps,
            "state": self.state,
            "flagged": self.flagged,
        }


@dataclass
class MonitoringReport:
    domain: str
    offer_id: str
    window_s: float
    measured_delay_s: float | None
    delivered_ratio: float
    alarms: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.delivered_ratio <= 1.0:
            raise WindctlError("delivered_ratio must be within [0,1]")

    def to_dict(self) -> dict:
        return {
            "domain": self.domain,
            "offer_id": self.offer_id,
            "window_s": self.window_s,
            "measured_delay_s": self.measured_delay_s,
            "delivered_ratio": self.delivered_ratio,
            "alarms": list(self.alarms),
        }


class Qor:
    """Centralized QoS orchestrator: one serialized decision loop."""

    def __init__(self, security: SecurityManager | None = None, clock=None):
        self.security = security or SecurityManager()
        self.clock = clock or _time.time
        self.domains: dict[str, dict] = {}  # domain -> descriptor
        self.registrations: dict[str, str] = {}
        self.offers: dict[str, list[PathSegmentOffer]] = {}
        self.paths: dict[str, E2EPath] = {}
        self.monitoring: list[dict] = []
        self.qon_clients: dict[str, object] = {}
        self.message_log: list[dict] = []
        self._ids = itertools.count(1)

    # -- phase 1: registration ---------------------------------------------------

    def register_domain(self, descriptor: dict, token: str) -> str:
        self.security.validate_token(token)
        self.message_log.append({"op": "register", **descriptor})
        domain = descriptor.get("domain")
        if not domain:
            raise WindctlError("descriptor must carry a domain id")
        if domain in self.registrations:
            return self.registrations[domain]
        reg_id = f"reg-{next(self._ids)}"
        self.domains[domain] = descriptor
        self.registrations[domain] = reg_id
        self.offers.setdefault(domain, [])
        return reg_id

    def attach_qon(self, domain: str, client) -> None:
        self.qon_clients[domain] = client

    # -- phase 2: announcements -----------------------------------------------------

    def announce_offers(self, domain: str, offers: list[dict], token: str) -> None:
        """Full-state replace of the domain's offer set."""
        self.security.validate_token(token)
        if domain not in self.registrations:
            raise UnknownEntityError(f"domain {domain!r} is not registered")
        self.message_log.append({"op": "announce", "domain": domain,
                                 "offers": list(offers)})
        now = self.clock()
        parsed = [PathSegmentOffer.from_dict(o) for o in offers]
        self.offers[domain] = [o for o in parsed if o.valid_until >= now]

    def usable_offers(self, bandwidth_bps: float) -> list[PathSegmentOffer]:
        now = self.clock()
        return [
            o
            for offers in self.offers.values()
            for o in offers
            if o.valid_until >= now and o.bandwidth_bps >= bandwidth_bps
        ]

    # -- phase 3: computation and instantiation ----------------------------------------

    def _adjacency(self) -> dict[tuple[str, str], list[tuple[str, str]]]:
        adj: dict[tuple[str, str], list[tuple[str, str]]] = {}
        for domain, desc in self.domains.items():
            for peer in desc.get("peerings", []):
                key = (domain, peer["gateway"])
                adj.setdefault(key, []).append(
                    (peer["remote_domain"], peer["remote_gateway"])
                )
        return adj

    def compute_e2e_path(
        self,
        src_domain: str,
        dst_domain: str,
        delay_budget_s: float,
        bandwidth_bps: float,
    ) -> E2EPath | None:
        """Cheapest chain of valid offers meeting the budget, or None.

        Label-setting over (domain, border device) states with (cost, delay)
        dominance; exact at desk scale.
        """
        for d in (src_domain, dst_domain):
            if d not in self.registrations:
                raise UnknownEntityError(f"domain {d!r} is not registered")
        adjacency = self._adjacency()
        offers_at: dict[tuple[str, str], list[PathSegmentOffer]] = {}
        for o in self.usable_offers(bandwidth_bps):
            offers_at.setdefault((o.domain, o.ingress), []).append(o)

        # States carry a phase: "out" (at a device, allowed to cross a
        # peering) or "in" (just arrived in a transit domain, must consume
        # one of its offers). A domain can never be relayed through for free.
        heap: list = []
        counter = itertools.count()
        for (domain, device) in sorted(adjacency):
            if domain == src_domain:
                heapq.heappush(
                    heap, (0.0, 0.0, next(counter), (domain, device, "out"), ())
                )
        best: dict[tuple, list[tuple[float, float]]] = {}
        winner: tuple[tuple, tuple] | None = None  # (sort key, offer chain)
        while heap:
            cost, delay, _n, state, chain = heapq.heappop(heap)
            if winner is not None and cost > winner[0][0]:
                break
            bucket = best.setdefault(state, [])
            if any(c <= cost and d <= delay for c, d in bucket):
                continue
            bucket.append((cost, delay))
            domain, device, phase = state
            if phase == "out":
                for nxt_domain, nxt_device in sorted(
                    adjacency.get((domain, device), [])
                ):
                    if nxt_domain == dst_domain:
                        if chain:
                            key = (cost, delay,
                                   tuple(o.offer_id for o in chain))
                            if winner is None or key < winner[0]:
                                winner = (key, chain)
                        continue
                    if nxt_domain not in self.registrations:
                        continue
                    if any(o.domain == nxt_domain for o in chain):
                        continue  # keep chains domain-simple
                    heapq.heappush(
                        heap,
                        (cost, delay, next(counter),
                         (nxt_domain, nxt_device, "in"), chain),
                    )
            else:
                for offer in sorted(
                    offers_at.get((domain, device), []),
                    key=lambda o: o.offer_id,
                ):
                    nd = delay + offer.delay_s
                    if nd > delay_budget_s + 1e-15:
                        continue
                    heapq.heappush(
                        heap,
                        (cost + offer.cost, nd, next(counter),
                         (offer.domain, offer.egress, "out"),
                         chain + (offer,)),
                    )
        if winner is None:
            return None
        chain = winner[1]
        path = E2EPath(
            path_id=f"path-{next(self._ids)}",
            offers=list(chain),
            endpoint_domains=(src_domain, dst_domain),
            total_delay_s=sum(o.delay_s for o in chain),
            bottleneck_bps=min(o.bandwidth_bps for o in chain),
            requested_bps=bandwidth_bps,
        )
        self.paths[path.path_id] = path
        return path

    def instantiate_path(self, path_id: str,
                         flow: tuple[str, str] | None = None) -> E2EPath:
        """Two-phase: reserve on every involved domain, then commit; any
        reserve failure releases prior reserves and leaves the path computed."""
        path = self.paths.get(path_id)
        if path is None:
            raise UnknownEntityError(f"unknown path {path_id!r}")
        if path.state not in ("computed",):
            raise WindctlError(f"path {path_id} is {path.state}, not computed")
        now = self.clock()
        for offer in path.offers:
            live = [
                o for o in self.offers.get(offer.domain, [])
                if o.offer_id == offer.offer_id and o.valid_until >= now
            ]
            if not live:
                self.offers[offer.domain] = [
                    o for o in self.offers.get(offer.domain, [])
                    if o.valid_until >= now
                ]
                raise ReserveFailedError(offer.domain, "offer expired")

        flow = flow or ("?", "?")
        reserved: list[PathSegmentOffer] = []
        for i, offer in enumerate(path.offers):
            client = self.qon_clients.get(offer.domain)
            if client is None:
                result = {"ok": False, "reason": "no negotiator attached"}
            else:
                nxt = self._next_hop(path, i)
                request = {
                    "offer_id": offer.offer_id,
                    "flow_src": flow[0],
                    "flow_dst": flow[1],
                    "bandwidth_bps": path.requested_bps or path.bottleneck_bps,
                    "next_domain": nxt[0],
                    "next_device": nxt[1],
                }
                self.message_log.append({"op": "reserve", **request})
                result = client.reserve(request)
            if not result.get("ok"):
                for prev in reserved:
                    self.qon_clients[prev.domain].release(
                        {"offer_id": prev.offer_id,
                         "flow_src": flow[0], "flow_dst": flow[1]}
                    )
                raise ReserveFailedError(
                    offer.domain, result.get("reason", "rejected")
                )
            reserved.append(offer)
        path.state = "active"
        path.flow = flow
        return path

    def _next_hop(self, path: E2EPath, index: int) -> tuple[str, str]:
        offer = path.offers[index]
        if index + 1 < len(path.offers):
            nxt = path.offers[index + 1]
            return nxt.domain, nxt.ingress
        # last transit domain hands over to the destination industrial domain
        dst_domain = path.endpoint_domains[1]
        for peer in self.domains[offer.domain].get("peerings", []):
            if peer["gateway"] == offer.egress and peer["remote_domain"] == dst_domain:
                return dst_domain, peer["remote_gateway"]
        return dst_domain, ""

    def teardown_path(self, path_id: str) -> None:
        path = self.paths.get(path_id)
        if path is None or path.state != "active":
            return
        for offer in path.offers:
            client = self.qon_clients.get(offer.domain)
            if client is not None:
                client.release(
                    {"offer_id": offer.offer_id,
                     "flow_src": (path.flow or ("?", "?"))[0],
                     "flow_dst": (path.flow or ("?", "?"))[1]}
                )
        path.state = "torn-down"

    # -- phase 4: monitoring --------------------------------------------------------

    def report_monitoring(self, domain: str, report: dict, token: str) -> None:
        self.security.validate_token(token)
        if domain not in self.registrations:
            raise UnknownEntityError(f"domain {domain!r} is not registered")
        known = {o.offer_id for o in self.offers.get(domain, [])} | {
            o.offer_id for p in self.paths.values() for o in p.offers
        }
        if report.get("offer_id") not in known:
            raise UnknownEntityError(
                f"report references unknown offer {report.get('offer_id')!r}"
            )
        self.message_log.append({"op": "monitoring", "domain": domain,
                                 **report})
        entry = dict(report)
        entry["domain"] = domain
        entry["received_at"] = self.clock()
        self.monitoring.append(entry)
        alarms = set(report.get("alarms", []))
        if "segment-unavailable" in alarms:
            for path in self.paths.values():
                if path.state == "active" and any(
                    o.offer_id == report["offer_id"] for o in path.offers
                ):
                    path.flagged = True
        if "qos-threat" in alarms:
            for offers in self.offers.values():
                for o in offers:
                    if o.offer_id == report["offer_id"]:
                        # annotate by shrinking validity; recomputation will
                        # prefer healthy offers
                        o.valid_until = min(o.valid_until, self.clock() + 30.0)

    def recent_monitoring(self, limit: int = 50) -> list[dict]:
        return self.monitoring[-limit:]


class Qon:
    """Per-domain QoS negotiator: translates orchestrator requests into
    domain actions and filters monitoring upward."""

    def __init__(self, controller, qor: Qor, password: str,
                 transit_burst_bits: float = 8000.0,
                 aggregate_burst_flows: int = 4):
        self.controller = controller
        self.qor = qor
        self.password = password
        self.transit_burst_bits = transit_burst_bits
        # offers promise a delay that holds while up to this many flows (by
        # burst) share the segment; further reservations are refused
        self.aggregate_burst_flows = aggregate_burst_flows
        self.token: str | None = None
        self.reservations: dict[tuple[str, str, str], dict] = {}
        self.offer_paths: dict[str, list[str]] = {}  # offer -> link ids (private)

    @property
    def domain(self) -> str:
        return self.controller.domain

    def authenticate(self) -> str:
        account = f"qon-{self.domain}"
        token = self.qor.security.authenticate(
            {"username": account, "password": self.password}
        )
        self.token = token.value
        return self.token

    def descriptor(self) -> dict:
        dom = self.controller.graph.domains[self.domain]
        return {
            "domain": self.domain,
            "kind": dom.kind,
            "gateways": list(dom.border_gateways),
            "peerings": [
                {
                    "gateway": p.gateway,
                    "remote_domain": p.remote_domain,
                    "remote_gateway": p.remote_gateway,
                }
                for p in dom.peers
            ],
        }

    def register(self) -> str:
        if self.token is None:
            self.authenticate()
        reg = self.qor.register_domain(self.descriptor(), self.token)
        self.qor.attach_qon(self.domain, self)
        return reg

    # -- offer generation -----------------------------------------------------------

    def generate_offers(self, template_rate_bps: float = 1_000_000.0,
                        validity_s: float = OFFER_VALIDITY_S) -> list[dict]:
        """One offer per ordered border-gateway pair, derived from the
        engine's aggregated view: the advertised delay is the worst-case
        bound of a template transit flow on the best path (including the
        burst of the segment's own monitoring probes, so the promise stays
        honest once probing runs), bandwidth is the residual bottleneck,
        cost is the hop count."""
        dom = self.controller.graph.domains[self.domain]
        offers: list[dict] = []
        engine = self.controller.engine
        probe_cfg = getattr(self.controller, "probe_config", None) or (0.0, 0.0)
        probe_rate = probe_cfg[0] * probe_cfg[1]
        envelope = self.transit_burst_bits * self.aggregate_burst_flows
        for ingress in sorted(dom.border_gateways):
            for egress in sorted(dom.border_gateways):
                if ingress == egress:
                    continue
                spec = FlowSpec(
                    flow_id=f"offer-template:{ingress}:{egress}",
                    src=ingress,
                    dst=egress,
                    arrival=ArrivalCurve(template_rate_bps + probe_rate,
                                         envelope + probe_cfg[1]),
                    delay_req_s=10.0,
                    tenant="_transit",
                )
                found = engine.compute_constrained_path(spec)
                if found is None:
                    continue
                links, queues, bound = found
                bandwidth = self._residual_bottleneck(links, queues, spec)
                offer_id = f"{self.domain}:{ingress}->{egress}"
                self.offer_paths[offer_id] = links
                offers.append(
                    PathSegmentOffer(
                        offer_id=offer_id,
                        domain=self.domain,
                        ingress=ingress,
                        egress=egress,
                        delay_s=bound,
                        bandwidth_bps=bandwidth,
                        cost=float(len(links)),
                        valid_until=self.qor.clock() + validity_s,
                    ).to_dict()
                )
        return offers

    def _residual_bottleneck(self, links, queues, spec) -> float:
        graph = self.controller.graph
        engine = self.controller.engine
        node = spec.src
        bottleneck = float("inf")
        for lid, qid in zip(links, queues):
            link = graph.link(lid)
            egress = link.port_of(node)
            node = link.other(node).node
            bottleneck = min(bottleneck, engine.residual_rate(egress, qid))
        return bottleneck

    def announce(self) -> None:
        if self.token is None:
            self.authenticate()
        self.qor.announce_offers(self.domain, self.generate_offers(), self.token)

    # -- reserve / release ------------------------------------------------------------

    def reserve(self, request: dict) -> dict:
        """Reserve a segment for a flow: embed the transit flow on the offer
        path, install label rules, and start a probe flow."""
        offer_id = request["offer_id"]
        key = (offer_id, request["flow_src"], request["flow_dst"])
        if key in self.reservations:
            return {"ok": True, "idempotent": True}
        links = self.offer_paths.get(offer_id)
        if links is None:
            return {"ok": False, "reason": "unknown offer"}
        ingress = offer_id.split(":", 2)[1].split("->")[0]
        spec = FlowSpec(
            flow_id=f"transit:{offer_id}:{request['flow_src']}->{request['flow_dst']}",
            src=ingress,
            dst=self._egress_of(offer_id),
            arrival=ArrivalCurve(request["bandwidth_bps"],
                                 self.transit_burst_bits),
            delay_req_s=self._offer_delay(offer_id),
            tenant="_transit",
        )
        try:
            embedding = self.controller.engine.embed_flow(spec)
        except Exception as e:  # admission errors surface as reserve failures
            return {"ok": False, "reason": str(e)}
        exit_port = self._peer_port(
            self._egress_of(offer_id), request.get("next_device")
        )
        if exit_port is None:
            self.controller.engine.release_flow(spec.flow_id)
            return {"ok": False, "reason": "no peering toward next domain"}
        rules = self.controller.resources.embed_transit_rules(
            offer_id,
            embedding.primary,
            ingress,
            exit_port,
            (request["flow_src"], request["flow_dst"]),
        )
        probe_id = self._start_probe(offer_id, ingress)
        self.reservations[key] = {
            "flow_id": spec.flow_id,
            "rules": len(rules),
            "probe": probe_id,
            "embedding": embedding,
        }
        return {"ok": True}

    def release(self, request: dict) -> dict:
        key = (request["offer_id"], request["flow_src"], request["flow_dst"])
        res = self.reservations.pop(key, None)
        if res is None:
            return {"ok": True, "idempotent": True}
        self.controller.engine.release_flow(res["flow_id"])
        if res["probe"] is not None:
            try:
                self.controller.engine.release_flow(res["probe"])
                self.controller.resources.remove_rules(res["probe"])
            except UnknownEntityError:
                pass
        if not any(k[0] == request["offer_id"] for k in self.reservations):
            self.controller.resources.release_transit(request["offer_id"])
        return {"ok": True}

    def _offer_delay(self, offer_id: str) -> float:
        for offers in self.qor.offers.values():
            for o in offers:
                if o.offer_id == offer_id:
                    return o.delay_s
        return 10.0  # not announced yet; effectively unconstrained

    def _egress_of(self, offer_id: str) -> str:
        return offer_id.split("->")[-1]

    def _peer_port(self, egress_gw: str, next_device: str | None) -> int | None:
        if not next_device:
            return None
        graph = self.controller.graph
        for link in graph.links_at(egress_gw):
            if link.other(egress_gw).node == next_device:
                return link.port_of(egress_gw).port
        return None

    def _start_probe(self, offer_id: str, ingress: str) -> str | None:
        probe_cfg = getattr(self.controller, "probe_config", None)
        if probe_cfg is None:
            return None
        rate_hz, bits = probe_cfg
        flow_id = f"probe:{offer_id}"
        if flow_id in self.controller.engine.embeddings:
            return flow_id
        # probes verify the promise rather than compete with it; keep their
        # own admission budget loose
        spec = FlowSpec(
            flow_id=flow_id,
            src=ingress,
            dst=self._egress_of(offer_id),
            arrival=ArrivalCurve(rate_hz * bits, bits),
            delay_req_s=self._offer_delay(offer_id) + 0.05,
            tenant="_transit",
        )
        try:
            embedding = self.controller.engine.embed_flow(spec)
            self.controller.resources.embed_rules(embedding, vtn_tag=None)
        except Exception:
            return None
        return flow_id

    # -- monitoring upward ----------------------------------------------------------

    def publish_monitoring(self, trace: list[dict], window_s: float,
                           now: float) -> list[dict]:
        """Filter domain telemetry to critical updates plus statistics."""
        if self.token is None:
            self.authenticate()
        sent = []
        for offer_id, links in sorted(self.offer_paths.items()):
            if not any(k[0] == offer_id for k in self.reservations):
                continue
            probe_flow = f"probe:{offer_id}"
            report = self.controller.resources.monitor_intent(
                trace, offer_id, window_s, now, self._offer_delay(offer_id),
                probe_flow=probe_flow,
            )
            alarms = []
            graph = self.controller.graph
            if any(graph.links[lid].state != "up" for lid in links):
                alarms.append("segment-unavailable")
            if (
                report.observed_max_delay_s is not None
                and report.observed_max_delay_s > self._offer_delay(offer_id)
            ):
                alarms.append("qos-threat")
            total = report.delivered_packets + report.lost_packets
            payload = MonitoringReport(
                domain=self.domain,
                offer_id=offer_id,
                window_s=window_s,
                measured_delay_s=report.observed_max_delay_s,
                delivered_ratio=(
                    report.delivered_packets / total if total else 1.0
                ),
                alarms=alarms,
            ).to_dict()
            self.qor.report_monitoring(self.domain, payload, self.token)
            sent.append(payload)
        return sent
