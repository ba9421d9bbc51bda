"""Physical multi-domain network graph and the scenario/workload description.

The scenario document is UTF-8 JSON with top-level keys `nodes`, `links`,
`queues`, `domains`, `tenants`, `intents`, `failures`, `sim`. Rates are
bits/second, delays are seconds, everywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterator

from .errors import ScenarioError, UnknownEntityError

NODE_KINDS = {
    "switch",
    "host",
    "controller",
    "border-gateway",
    "micro-cloud",
    "iiot-gateway",
    "sensor",
}

# Nodes that run a (software) switch and hold a flow table.
SWITCH_LIKE = {"switch", "border-gateway", "micro-cloud", "iiot-gateway"}

PROTECTIONS = {"none", "fast-failover", "one-plus-one"}
FLOW_CLASSES = {"real-time", "best-effort"}

BEST_EFFORT_QUEUE = 0

_DEFAULT_SLOTS = {"micro-cloud": 4, "iiot-gateway": 16}


@dataclass(frozen=True)
class PortRef:
    node: str
    port: int

    def __str__(self) -> str:
        return f"{self.node}:{self.port}"


@dataclass
class Node:
    id: str
    kind: str
    domain: str
    slots: int = 0  # VNF capacity; only meaningful for micro-cloud / iiot-gateway
    table_capacity: int = 1024


@dataclass
class Link:
    id: str
    a: PortRef
    b: PortRef
    capacity_bps: float
    propagation_s: float
    state: str = "up"  # up | down

    def other(self, node: str) -> PortRef:
        if node == self.a.node:
            return self.b
        if node == self.b.node:
            return self.a
        raise ValueError(f"node {node} not on link {self.id}")

    def port_of(self, node: str) -> PortRef:
        if node == self.a.node:
            return self.a
        if node == self.b.node:
            return self.b
        raise ValueError(f"node {node} not on link {self.id}")


@dataclass
class Queue:
    port: PortRef
    queue_id: int
    rate_bps: float
    latency_s: float


@dataclass
class Peering:
    gateway: str
    remote_domain: str
    remote_gateway: str


@dataclass
class Domain:
    id: str
    kind: str  # industrial | nsp
    border_gateways: list[str] = field(default_factory=list)
    peers: list[Peering] = field(default_factory=list)


@dataclass(frozen=True)
class LinkEvent:
    version: int
    link_id: str
    old_state: str
    new_state: str


class NetworkGraph:
    """Mutable graph with a monotone version counter and change subscribers."""

    def __init__(self):
        self.nodes: dict[str, Node] = {}
        self.links: dict[str, Link] = {}
        self.queues: dict[tuple[str, int, int], Queue] = {}
        self.domains: dict[str, Domain] = {}
        self.version = 0
        self._subscribers: list[Callable[[LinkEvent], None]] = []

    # -- construction -----------------------------------------------------

    def add_node(self, node: Node) -> None:
        if node.id in self.nodes:
            raise ScenarioError(f"duplicate node id {node.id!r}", field="nodes")
        self.nodes[node.id] = node
        self.version += 1

    def add_link(self, link: Link) -> None:
        if link.id in self.links:
            raise ScenarioError(f"duplicate link id {link.id!r}", field="links")
        for end in (link.a, link.b):
            if end.node not in self.nodes:
                raise ScenarioError(
                    f"unknown endpoint {end.node!r} in link {link.id!r}",
                    field="links",
                )
        if link.capacity_bps <= 0:
            raise ScenarioError(
                f"link {link.id!r} capacity must be > 0", field="links"
            )
        if link.propagation_s < 0:
            raise ScenarioError(
                f"link {link.id!r} propagation must be >= 0", field="links"
            )
        self.links[link.id] = link
        self.version += 1

    def add_queue(self, queue: Queue) -> None:
        key = (queue.port.node, queue.port.port, queue.queue_id)
        if key in self.queues:
            raise ScenarioError(f"duplicate queue {key}", field="queues")
        if queue.queue_id == BEST_EFFORT_QUEUE:
            raise ScenarioError(
                "queue id 0 is the implicit best-effort queue", field="queues"
            )
        self.queues[key] = queue
        self.version += 1

    def add_domain(self, domain: Domain) -> None:
        if domain.id in self.domains:
            raise ScenarioError(f"duplicate domain id {domain.id!r}", field="domains")
        self.domains[domain.id] = domain
        self.version += 1

    # -- lookups ----------------------------------------------------------

    def node(self, node_id: str) -> Node:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownEntityError(f"unknown node {node_id!r}") from None

    def link(self, link_id: str) -> Link:
        try:
            return self.links[link_id]
        except KeyError:
            raise UnknownEntityError(f"unknown link {link_id!r}") from None

    def links_at(self, node_id: str) -> list[Link]:
        return [
            l
            for l in self.links.values()
            if l.a.node == node_id or l.b.node == node_id
        ]

    def ports_of(self, node_id: str) -> dict[int, Link]:
        """Port index -> attached link."""
        out: dict[int, Link] = {}
        for l in self.links.values():
            for end in (l.a, l.b):
                if end.node == node_id:
                    out[end.port] = l
        return out

    def link_at_port(self, port: PortRef) -> Link:
        for l in self.links.values():
            if l.a == port or l.b == port:
                return l
        raise UnknownEntityError(f"no link at port {port}")

    def real_time_queue(self, port: PortRef) -> Queue | None:
        for (n, p, _q), queue in self.queues.items():
            if n == port.node and p == port.port:
                return queue
        return None

    def best_effort_rate(self, port: PortRef) -> float:
        link = self.link_at_port(port)
        declared = sum(
            q.rate_bps
            for (n, p, _), q in self.queues.items()
            if n == port.node and p == port.port
        )
        return link.capacity_bps - declared

    def attachment(self, node_id: str) -> tuple[Link, PortRef, str]:
        """Single attachment of an endpoint node: (link, local port, peer node)."""
        links = self.links_at(node_id)
        if len(links) != 1:
            raise ScenarioError(
                f"node {node_id!r} must have exactly one attachment, has {len(links)}"
            )
        link = links[0]
        local = link.port_of(node_id)
        return link, local, link.other(node_id).node

    def domain_of(self, node_id: str) -> str:
        return self.node(node_id).domain

    def nodes_in_domain(self, domain_id: str) -> list[Node]:
        return [n for n in self.nodes.values() if n.domain == domain_id]

    # -- mutation ---------------------------------------------------------

    def subscribe(self, fn: Callable[[LinkEvent], None]) -> None:
        self._subscribers.append(fn)

    def apply_link_event(self, link_id: str, new_state: str) -> bool:
        """Set a link up or down. Returns True when the state changed."""
        if new_state not in ("up", "down"):
            raise ValueError(f"bad link state {new_state!r}")
        link = self.link(link_id)
        if link.state == new_state:
            return False
        old = link.state
        link.state = new_state
        self.version += 1
        event = LinkEvent(self.version, link_id, old, new_state)
        for fn in self._subscribers:
            fn(event)
        return True

    # -- validation and snapshots ------------------------------------------

    def validate(self) -> None:
        for node in self.nodes.values():
            if node.kind not in NODE_KINDS:
                raise ScenarioError(
                    f"node {node.id!r} has unknown kind {node.kind!r}", field="nodes"
                )
            if node.domain not in self.domains:
                raise ScenarioError(
                    f"node {node.id!r} references unknown domain {node.domain!r}",
                    field="nodes",
                )
            if node.kind == "sensor":
                _, _, peer = self.attachment(node.id)
                if self.node(peer).kind != "iiot-gateway":
                    raise ScenarioError(
                        f"sensor {node.id!r} must attach to an iiot-gateway",
                        field="nodes",
                    )

        # dense port indices per node
        for node_id in self.nodes:
            ports = sorted(self.ports_of(node_id))
            if ports and ports != list(range(len(ports))):
                raise ScenarioError(
                    f"node {node_id!r} ports are not dense: {ports}", field="links"
                )

        for (n, p, _q), queue in self.queues.items():
            port = PortRef(n, p)
            try:
                link = self.link_at_port(port)
            except UnknownEntityError:
                raise ScenarioError(
                    f"queue on unknown port {port}", field="queues"
                ) from None
            declared = [
                q
                for (qn, qp, _), q in self.queues.items()
                if qn == n and qp == p
            ]
            if len(declared) > 1:
                raise ScenarioError(
                    f"multiple real-time queues on port {port}", field="queues"
                )
            if sum(q.rate_bps for q in declared) > link.capacity_bps:
                raise ScenarioError(
                    f"queue oversubscription on port {port}: "
                    f"{sum(q.rate_bps for q in declared)} > {link.capacity_bps}",
                    field="queues",
                )
            if queue.rate_bps <= 0 or queue.latency_s < 0:
                raise ScenarioError(f"bad queue parameters at {port}", field="queues")

        for domain in self.domains.values():
            if domain.kind not in ("industrial", "nsp"):
                raise ScenarioError(
                    f"domain {domain.id!r} has unknown kind {domain.kind!r}",
                    field="domains",
                )
            for gw in domain.border_gateways:
                node = self.node(gw)
                if node.kind != "border-gateway" or node.domain != domain.id:
                    raise ScenarioError(
                        f"border gateway {gw!r} of domain {domain.id!r} must be a "
                        "border-gateway node inside the domain",
                        field="domains",
                    )
            for peer in domain.peers:
                if peer.gateway not in domain.border_gateways:
                    raise ScenarioError(
                        f"peering gateway {peer.gateway!r} not a border gateway of "
                        f"{domain.id!r}",
                        field="domains",
                    )

        self._check_domain_connectivity()

    def _check_domain_connectivity(self) -> None:
        for domain_id in self.domains:
            members = [n.id for n in self.nodes_in_domain(domain_id)]
            if len(members) <= 1:
                continue
            seen = {members[0]}
            frontier = [members[0]]
            while frontier:
                cur = frontier.pop()
                for link in self.links_at(cur):
                    peer = link.other(cur).node
                    if self.node(peer).domain == domain_id and peer not in seen:
                        seen.add(peer)
                        frontier.append(peer)
            missing = set(members) - seen
            if missing:
                raise ScenarioError(
                    f"domain {domain_id!r} is not connected; unreachable: "
                    f"{sorted(missing)}",
                    field="links",
                )

    def snapshot(self) -> dict:
        """Consistent JSON-able view at the current version."""
        return {
            "version": self.version,
            "nodes": [
                {"id": n.id, "kind": n.kind, "domain": n.domain}
                for n in self.nodes.values()
            ],
            "links": [
                {
                    "id": l.id,
                    "a": {"node": l.a.node, "port": l.a.port},
                    "b": {"node": l.b.node, "port": l.b.port},
                    "capacity_bps": l.capacity_bps,
                    "propagation_s": l.propagation_s,
                    "state": l.state,
                }
                for l in self.links.values()
            ],
            "domains": [
                {
                    "id": d.id,
                    "kind": d.kind,
                    "border_gateways": list(d.border_gateways),
                }
                for d in self.domains.values()
            ],
        }


# -- workload ---------------------------------------------------------------


@dataclass
class TenantDecl:
    id: str
    password: str
    profile: dict | None = None  # parsed by security_access


@dataclass
class IntentSpec:
    """Scenario-level connectivity request plus its traffic description."""

    id: str
    tenant: str
    src: str
    dst: str
    rate_bps: float
    burst_bits: float
    delay_req_s: float | None
    protection: str = "none"
    flow_class: str = "real-time"
    packet_bits: float = 8000.0
    period_s: float = 0.1
    schedule: tuple[float, float] | None = None
    service: str | None = None
    chain: list[str] | None = None  # service-chain VNF kinds, in order


@dataclass
class FailureEvent:
    time_s: float
    target: str  # link id, or "replica:<i>"
    event: str  # down | up | crash | recover


@dataclass
class ControlTraffic:
    rate_bps: float = 50_000.0
    burst_bits: float = 4_000.0
    packet_bits: float = 1_000.0
    period_s: float = 0.02
    delay_req_s: float = 0.05


@dataclass
class SimConfig:
    seed: int = 0
    duration_s: float = 10.0
    control: ControlTraffic = field(default_factory=ControlTraffic)
    detection_timeout_s: float = 0.01
    replicas: int = 3
    probe_rate_hz: float = 10.0
    probe_bits: float = 512.0


@dataclass
class Workload:
    tenants: list[TenantDecl]
    intents: list[IntentSpec]
    failures: list[FailureEvent]
    sim: SimConfig


# -- scenario parsing ---------------------------------------------------------


def _req(obj: dict, key: str, where: str):
    if key not in obj:
        raise ScenarioError(f"missing required field {key!r}", field=where)
    return obj[key]


def load_scenario(text: str) -> tuple[NetworkGraph, Workload]:
    """Parse and validate a scenario document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"invalid JSON at line {e.lineno}: {e.msg}") from None
    return load_scenario_dict(doc)


def load_scenario_dict(doc: dict) -> tuple[NetworkGraph, Workload]:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a JSON object")

    graph = NetworkGraph()

    for d in doc.get("domains", []):
        graph.add_domain(
            Domain(
                id=_req(d, "id", "domains"),
                kind=d.get("kind", "industrial"),
                border_gateways=list(d.get("border_gateways", [])),
                peers=[
                    Peering(
                        gateway=_req(p, "gateway", "domains.peers"),
                        remote_domain=_req(p, "remote_domain", "domains.peers"),
                        remote_gateway=_req(p, "remote_gateway", "domains.peers"),
                    )
                    for p in d.get("peers", [])
                ],
            )
        )

    for n in _req(doc, "nodes", "scenario"):
        kind = _req(n, "kind", "nodes")
        graph.add_node(
            Node(
                id=_req(n, "id", "nodes"),
                kind=kind,
                domain=_req(n, "domain", "nodes"),
                slots=int(n.get("slots", _DEFAULT_SLOTS.get(kind, 0))),
                table_capacity=int(n.get("table_capacity", 1024)),
            )
        )

    for l in _req(doc, "links", "scenario"):
        a = _req(l, "a", "links")
        b = _req(l, "b", "links")
        for end, name in ((a, "a"), (b, "b")):
            if end.get("node") not in graph.nodes:
                raise ScenarioError(
                    f"unknown endpoint {end.get('node')!r} in link "
                    f"{l.get('id')!r}",
                    field="links",
                )
        graph.add_link(
            Link(
                id=_req(l, "id", "links"),
                a=PortRef(a["node"], int(_req(a, "port", "links.a"))),
                b=PortRef(b["node"], int(_req(b, "port", "links.b"))),
                capacity_bps=float(_req(l, "capacity_bps", "links")),
                propagation_s=float(_req(l, "propagation_s", "links")),
            )
        )

    for q in doc.get("queues", []):
        graph.add_queue(
            Queue(
                port=PortRef(_req(q, "node", "queues"), int(_req(q, "port", "queues"))),
                queue_id=int(q.get("queue", 1)),
                rate_bps=float(_req(q, "rate_bps", "queues")),
                latency_s=float(q.get("latency_s", 0.0)),
            )
        )

    graph.validate()

    tenants = [
        TenantDecl(
            id=_req(t, "id", "tenants"),
            password=_req(t, "password", "tenants"),
            profile=t.get("profile"),
        )
        for t in doc.get("tenants", [])
    ]
    tenant_ids = {t.id for t in tenants}

    sim_doc = doc.get("sim", {})
    control_doc = sim_doc.get("control", {})
    sim = SimConfig(
        seed=int(sim_doc.get("seed", 0)),
        duration_s=float(sim_doc.get("duration_s", 10.0)),
        control=ControlTraffic(
            rate_bps=float(control_doc.get("rate_bps", 50_000.0)),
            burst_bits=float(control_doc.get("burst_bits", 4_000.0)),
            packet_bits=float(control_doc.get("packet_bits", 1_000.0)),
            period_s=float(control_doc.get("period_s", 0.02)),
            delay_req_s=float(control_doc.get("delay_req_s", 0.05)),
        ),
        detection_timeout_s=float(sim_doc.get("detection_timeout_s", 0.01)),
        replicas=int(sim_doc.get("replicas", 3)),
        probe_rate_hz=float(sim_doc.get("probe_rate_hz", 10.0)),
        probe_bits=float(sim_doc.get("probe_bits", 512.0)),
    )

    intents = []
    for i in doc.get("intents", []):
        protection = i.get("protection", "none")
        if protection not in PROTECTIONS:
            raise ScenarioError(
                f"intent {i.get('id')!r}: unknown protection {protection!r}",
                field="intents",
            )
        flow_class = i.get("class", "real-time")
        if flow_class not in FLOW_CLASSES:
            raise ScenarioError(
                f"intent {i.get('id')!r}: unknown class {flow_class!r}",
                field="intents",
            )
        delay_req = i.get("delay_req_s")
        if flow_class == "real-time":
            if delay_req is None or float(delay_req) <= 0:
                raise ScenarioError(
                    f"intent {i.get('id')!r}: real-time intents need delay_req_s > 0",
                    field="intents",
                )
            delay_req = float(delay_req)
        else:
            if delay_req is not None:
                raise ScenarioError(
                    f"intent {i.get('id')!r}: best-effort intents take no delay_req_s",
                    field="intents",
                )
        tenant = _req(i, "tenant", "intents")
        if tenant not in tenant_ids:
            raise ScenarioError(
                f"intent {i.get('id')!r}: unknown tenant {tenant!r}", field="intents"
            )
        for end in ("src", "dst"):
            if _req(i, end, "intents") not in graph.nodes:
                raise ScenarioError(
                    f"intent {i.get('id')!r}: unknown endpoint {i[end]!r}",
                    field="intents",
                )
        period = float(i.get("period_s", 0.1))
        if period <= 0:
            raise ScenarioError(
                f"intent {i.get('id')!r}: period must be > 0", field="intents"
            )
        schedule = None
        if i.get("schedule") is not None:
            s = i["schedule"]
            schedule = (float(_req(s, "start_s", "intents.schedule")),
                        float(_req(s, "end_s", "intents.schedule")))
            if schedule[0] >= schedule[1]:
                raise ScenarioError(
                    f"intent {i.get('id')!r}: schedule start must precede end",
                    field="intents",
                )
        intents.append(
            IntentSpec(
                id=_req(i, "id", "intents"),
                tenant=tenant,
                src=i["src"],
                dst=i["dst"],
                rate_bps=float(_req(i, "rate_bps", "intents")),
                burst_bits=float(_req(i, "burst_bits", "intents")),
                delay_req_s=delay_req,
                protection=protection,
                flow_class=flow_class,
                packet_bits=float(i.get("packet_bits", 8000.0)),
                period_s=period,
                schedule=schedule,
                service=i.get("service"),
                chain=list(i["chain"]) if i.get("chain") else None,
            )
        )

    failures = []
    for f in doc.get("failures", []):
        event = _req(f, "event", "failures")
        target = _req(f, "target", "failures")
        time_s = float(_req(f, "time_s", "failures"))
        if event in ("down", "up"):
            if target not in graph.links:
                raise ScenarioError(
                    f"failure references unknown link {target!r}", field="failures"
                )
        elif event in ("crash", "recover"):
            if not target.startswith("replica:"):
                raise ScenarioError(
                    f"{event} target must be 'replica:<i>', got {target!r}",
                    field="failures",
                )
        else:
            raise ScenarioError(f"unknown failure event {event!r}", field="failures")
        if not 0 <= time_s <= sim.duration_s:
            raise ScenarioError(
                f"failure time {time_s} outside run duration {sim.duration_s}",
                field="failures",
            )
        failures.append(FailureEvent(time_s=time_s, target=target, event=event))

    workload = Workload(tenants=tenants, intents=intents, failures=failures, sim=sim)
    return graph, workload


def iter_switches(graph: NetworkGraph) -> Iterator[Node]:
    for node in graph.nodes.values():
        if node.kind in SWITCH_LIKE:
            yield node
