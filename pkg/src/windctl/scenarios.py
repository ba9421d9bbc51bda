"""Built-in scenario builders: canonical fixtures and seeded random scenarios.

Builders return plain scenario dicts (the JSON schema) so they can be written
to disk, loaded through the normal parser, or tweaked by tests.
"""

from __future__ import annotations

import random


class Builder:
    """Accumulates a scenario dict, assigning dense port indices per node."""

    def __init__(self):
        self.doc: dict = {
            "nodes": [],
            "links": [],
            "queues": [],
            "domains": [],
            "tenants": [],
            "intents": [],
            "failures": [],
            "sim": {"seed": 0, "duration_s": 10.0},
        }
        self._ports: dict[str, int] = {}

    def node(self, node_id: str, kind: str, domain: str, **extra) -> str:
        self.doc["nodes"].append({"id": node_id, "kind": kind, "domain": domain, **extra})
        return node_id

    def _next_port(self, node_id: str) -> int:
        p = self._ports.get(node_id, 0)
        self._ports[node_id] = p + 1
        return p

    def link(self, a: str, b: str, capacity_bps: float, propagation_s: float,
             link_id: str | None = None) -> str:
        lid = link_id or f"{a}-{b}"
        self.doc["links"].append(
            {
                "id": lid,
                "a": {"node": a, "port": self._next_port(a)},
                "b": {"node": b, "port": self._next_port(b)},
                "capacity_bps": capacity_bps,
                "propagation_s": propagation_s,
            }
        )
        return lid

    def rt_queues_everywhere(self, rate_fraction: float = 0.3,
                             latency_s: float = 0.0001) -> None:
        """Declare one real-time queue on every port of every link."""
        for link in self.doc["links"]:
            for end in ("a", "b"):
                self.doc["queues"].append(
                    {
                        "node": link[end]["node"],
                        "port": link[end]["port"],
                        "queue": 1,
                        "rate_bps": link["capacity_bps"] * rate_fraction,
                        "latency_s": latency_s,
                    }
                )


def ring6(
    protection: str = "none",
    seed: int = 42,
    duration_s: float = 10.0,
    replicas: int = 1,
    failures: list[dict] | None = None,
    extra_intents: list[dict] | None = None,
) -> dict:
    """Six-switch ring with a controller at S1, a SCADA host at S1 and a
    turbine host at S4. One real-time queue per port."""
    b = Builder()
    b.doc["domains"].append({"id": "park", "kind": "industrial"})
    for i in range(1, 7):
        b.node(f"S{i}", "switch", "park")
    b.node("C1", "controller", "park")
    b.node("scada", "host", "park")
    b.node("turb4", "host", "park")
    for i in range(1, 7):
        j = i % 6 + 1
        b.link(f"S{i}", f"S{j}", 1e9, 0.00005, link_id=f"R{i}")
    b.link("C1", "S1", 1e9, 0.00001)
    b.link("scada", "S1", 1e9, 0.00001)
    b.link("turb4", "S4", 1e9, 0.00001)
    b.rt_queues_everywhere(rate_fraction=0.3, latency_s=0.0001)
    b.doc["tenants"] = [
        {
            "id": "opergrid",
            "password": "grid-pass",
            "profile": {
                "allowed_endpoint_pairs": [["scada", "turb4"]],
                "max_bandwidth_bps": 5_000_000,
                "min_delay_req_s": 0.001,
                "allowed_protections": ["none", "fast-failover", "one-plus-one"],
            },
        },
        {
            "id": "maint",
            "password": "maint-pass",
            "profile": {
                "allowed_endpoint_pairs": [["scada", "turb4"]],
                "max_bandwidth_bps": 2_000_000,
                "min_delay_req_s": 0.005,
                "allowed_protections": ["none"],
            },
        },
    ]
    b.doc["intents"] = [
        {
            "id": "scada-loop",
            "tenant": "opergrid",
            "src": "scada",
            "dst": "turb4",
            "rate_bps": 80_000,
            "burst_bits": 8_000,
            "delay_req_s": 0.03,
            "protection": protection,
            "class": "real-time",
            "packet_bits": 8_000,
            "period_s": 0.1,
        }
    ] + (extra_intents or [])
    b.doc["failures"] = failures or []
    b.doc["sim"] = {
        "seed": seed,
        "duration_s": duration_s,
        "replicas": replicas,
        "detection_timeout_s": 0.01,
        "control": {
            "rate_bps": 50_000,
            "burst_bits": 4_000,
            "packet_bits": 1_000,
            "period_s": 0.02,
            "delay_req_s": 0.05,
        },
    }
    return b.doc


def chain3() -> dict:
    """S1 - S2 - S3 chain; only one path between any pair."""
    b = Builder()
    b.doc["domains"].append({"id": "lab", "kind": "industrial"})
    for i in range(1, 4):
        b.node(f"S{i}", "switch", "lab")
    b.link("S1", "S2", 1e9, 0.00005)
    b.link("S2", "S3", 1e9, 0.00005)
    b.rt_queues_everywhere()
    return b.doc


def interdomain(seed: int = 7, duration_s: float = 5.0) -> dict:
    """Two industrial parks joined by two NSP transit domains.

    park-a: scada host, gateway GA. park-b: turbine host, gateway GB.
    nsp1 and nsp2 each offer transit between their two border gateways;
    nsp1 is the short/cheap one.
    """
    b = Builder()
    b.doc["domains"] = [
        {
            "id": "park-a",
            "kind": "industrial",
            "border_gateways": ["GA"],
            "peers": [
                {"gateway": "GA", "remote_domain": "nsp1", "remote_gateway": "N1A"},
                {"gateway": "GA", "remote_domain": "nsp2", "remote_gateway": "N2A"},
            ],
        },
        {
            "id": "nsp1",
            "kind": "nsp",
            "border_gateways": ["N1A", "N1B"],
            "peers": [
                {"gateway": "N1A", "remote_domain": "park-a", "remote_gateway": "GA"},
                {"gateway": "N1B", "remote_domain": "park-b", "remote_gateway": "GB"},
            ],
        },
        {
            "id": "nsp2",
            "kind": "nsp",
            "border_gateways": ["N2A", "N2B"],
            "peers": [
                {"gateway": "N2A", "remote_domain": "park-a", "remote_gateway": "GA"},
                {"gateway": "N2B", "remote_domain": "park-b", "remote_gateway": "GB"},
            ],
        },
        {
            "id": "park-b",
            "kind": "industrial",
            "border_gateways": ["GB"],
            "peers": [
                {"gateway": "GB", "remote_domain": "nsp1", "remote_gateway": "N1B"},
                {"gateway": "GB", "remote_domain": "nsp2", "remote_gateway": "N2B"},
            ],
        },
    ]
    # park-a
    b.node("A1", "switch", "park-a")
    b.node("GA", "border-gateway", "park-a")
    b.node("CA", "controller", "park-a")
    b.node("scada", "host", "park-a")
    b.link("scada", "A1", 1e9, 0.00001)
    b.link("A1", "GA", 1e9, 0.00005)
    b.link("CA", "A1", 1e9, 0.00001)
    # nsp1: two border gateways, one core switch
    b.node("N1A", "border-gateway", "nsp1")
    b.node("N1C", "switch", "nsp1")
    b.node("N1B", "border-gateway", "nsp1")
    b.node("C1", "controller", "nsp1")
    b.link("N1A", "N1C", 10e9, 0.0005)
    b.link("N1C", "N1B", 10e9, 0.0005)
    b.link("C1", "N1C", 1e9, 0.00001)
    # nsp2: longer transit (two core switches)
    b.node("N2A", "border-gateway", "nsp2")
    b.node("N2C", "switch", "nsp2")
    b.node("N2D", "switch", "nsp2")
    b.node("N2B", "border-gateway", "nsp2")
    b.node("C2", "controller", "nsp2")
    b.link("N2A", "N2C", 10e9, 0.002)
    b.link("N2C", "N2D", 10e9, 0.002)
    b.link("N2D", "N2B", 10e9, 0.002)
    b.link("C2", "N2C", 1e9, 0.00001)
    # park-b
    b.node("GB", "border-gateway", "park-b")
    b.node("B1", "switch", "park-b")
    b.node("CB", "controller", "park-b")
    b.node("turb", "host", "park-b")
    b.link("GB", "B1", 1e9, 0.00005)
    b.link("turb", "B1", 1e9, 0.00001)
    b.link("CB", "B1", 1e9, 0.00001)
    # inter-domain links
    b.link("GA", "N1A", 10e9, 0.0002)
    b.link("GA", "N2A", 10e9, 0.0002)
    b.link("N1B", "GB", 10e9, 0.0002)
    b.link("N2B", "GB", 10e9, 0.0002)
    b.rt_queues_everywhere(rate_fraction=0.3, latency_s=0.0001)
    b.doc["tenants"] = [
        {
            "id": "opergrid",
            "password": "grid-pass",
            "profile": {
                "allowed_endpoint_pairs": [["scada", "turb"]],
                "max_bandwidth_bps": 20_000_000,
                "min_delay_req_s": 0.001,
                "allowed_protections": ["none", "fast-failover", "one-plus-one"],
            },
        }
    ]
    b.doc["intents"] = [
        {
            "id": "remote-scada",
            "tenant": "opergrid",
            "src": "scada",
            "dst": "turb",
            "rate_bps": 1_000_000,
            "burst_bits": 8_000,
            "delay_req_s": 0.05,
            "protection": "none",
            "class": "real-time",
            "packet_bits": 8_000,
            "period_s": 0.008,
        }
    ]
    b.doc["sim"] = {"seed": seed, "duration_s": duration_s, "replicas": 1}
    return b.doc


def random_segment_world(seed: int, max_transit: int = 8):
    """Random inter-domain world: (descriptors, offers_by_domain, adjacency,
    src_domain, dst_domain).

    Descriptors and offers are plain dicts in the orchestrator wire format;
    adjacency maps (domain, border device) -> [(peer domain, peer device)].
    """
    rng = random.Random(seed)
    now_margin = 100.0
    n_transit = rng.randint(1, max_transit)
    transits = [f"T{i}" for i in range(n_transit)]
    domains = ["SRC"] + transits + ["DST"]
    gateways = {d: [f"{d}g{i}" for i in range(rng.randint(1, 3))]
                for d in domains}
    peers: dict[str, list] = {d: [] for d in domains}
    ordered = ["SRC"] + transits + ["DST"]
    for a, b in zip(ordered, ordered[1:]):
        ga, gb = rng.choice(gateways[a]), rng.choice(gateways[b])
        peers[a].append((ga, b, gb))
        peers[b].append((gb, a, ga))
    for _ in range(rng.randint(0, 2 * n_transit)):
        a, b = rng.sample(domains, 2)
        ga, gb = rng.choice(gateways[a]), rng.choice(gateways[b])
        if (ga, b, gb) not in peers[a]:
            peers[a].append((ga, b, gb))
            peers[b].append((gb, a, ga))

    descriptors = []
    for d in domains:
        descriptors.append(
            {
                "domain": d,
                "kind": "industrial" if d in ("SRC", "DST") else "nsp",
                "gateways": gateways[d],
                "peerings": [
                    {"gateway": g, "remote_domain": rd, "remote_gateway": rg}
                    for (g, rd, rg) in peers[d]
                ],
            }
        )
    offers_by_domain: dict[str, list[dict]] = {}
    for t in transits:
        offers = []
        for gi in gateways[t]:
            for go in gateways[t]:
                if gi == go:
                    continue
                for _ in range(rng.randint(0, 2)):
                    offers.append(
                        {
                            "offer_id": f"{t}:{gi}->{go}#{len(offers)}",
                            "domain": t,
                            "ingress": gi,
                            "egress": go,
                            "delay_s": rng.uniform(0.001, 0.05),
                            "bandwidth_bps": rng.choice([20e6, 80e6, 500e6]),
                            "cost": float(rng.randint(1, 5)),
                            "valid_until": now_margin,
                        }
                    )
        offers_by_domain[t] = offers
    adjacency: dict[tuple[str, str], list[tuple[str, str]]] = {}
    for d in domains:
        for (g, rd, rg) in peers[d]:
            adjacency.setdefault((d, g), []).append((rd, rg))
    return descriptors, offers_by_domain, adjacency, "SRC", "DST"


def two_tenant(seed: int) -> dict:
    """Randomized two-tenant scenario used by the isolation checks."""
    rng = random.Random(seed)
    doc = random_scenario(
        seed, max_switches=8, max_flows=8, tenant_count=2, rng=rng
    )
    return doc


def random_scenario(
    seed: int,
    max_switches: int = 10,
    max_flows: int = 20,
    tenant_count: int = 2,
    with_failure: bool = False,
    duration_s: float = 3.0,
    rng: random.Random | None = None,
) -> dict:
    """Seeded random intra-domain scenario with conformant periodic sources.

    Flow declarations are chosen so the declared token bucket exactly
    envelopes the generated periodic traffic (burst = packet size, period =
    packet/rate), which is what admission control assumes.
    """
    rng = rng or random.Random(seed)
    b = Builder()
    b.doc["domains"].append({"id": "dom", "kind": "industrial"})
    n = rng.randint(3, max_switches)
    switches = [f"S{i}" for i in range(1, n + 1)]
    for s in switches:
        b.node(s, "switch", "dom")
    # random spanning tree, then extra edges
    edges: set[tuple[str, str]] = set()
    for i in range(1, n):
        j = rng.randrange(i)
        edges.add((switches[j], switches[i]))
    extra = rng.randint(0, n)
    for _ in range(extra):
        u, v = rng.sample(switches, 2)
        if (u, v) not in edges and (v, u) not in edges:
            edges.add((u, v))
    for u, v in sorted(edges):
        cap = rng.choice([100e6, 1e9])
        b.link(u, v, cap, rng.uniform(1e-5, 1e-4))
    # every endpoint device belongs to exactly one tenant; shared devices
    # would make untagged ingress classification ambiguous
    host_count = rng.randint(2 * tenant_count, max(6, 2 * tenant_count))
    hosts = []
    for h in range(host_count):
        hid = f"H{h + 1}"
        b.node(hid, "host", "dom")
        b.link(hid, rng.choice(switches), 1e9, 1e-5)
        hosts.append(hid)
    b.rt_queues_everywhere(
        rate_fraction=rng.uniform(0.35, 0.6), latency_s=rng.uniform(0.0, 2e-4)
    )
    tenants = [f"T{i + 1}" for i in range(tenant_count)]
    tenant_hosts = {t: hosts[i::tenant_count] for i, t in enumerate(tenants)}
    b.doc["tenants"] = [
        {
            "id": t,
            "password": f"{t}-pw",
            "profile": {
                "allowed_endpoint_pairs": [
                    [a, z] for a in tenant_hosts[t] for z in tenant_hosts[t]
                    if a != z
                ],
                "max_bandwidth_bps": 50_000_000,
                "min_delay_req_s": 0.0001,
                "allowed_protections": ["none", "fast-failover", "one-plus-one"],
            },
        }
        for t in tenants
    ]
    flow_count = rng.randint(1, max_flows)
    for i in range(flow_count):
        tenant = rng.choice(tenants)
        src, dst = rng.sample(tenant_hosts[tenant], 2)
        packet = rng.choice([2_000, 4_000, 8_000, 12_000])
        rate = rng.choice([100_000, 250_000, 500_000, 1_000_000])
        b.doc["intents"].append(
            {
                "id": f"f{i + 1}",
                "tenant": tenant,
                "src": src,
                "dst": dst,
                "rate_bps": rate,
                "burst_bits": packet,
                "delay_req_s": rng.uniform(0.02, 0.2),
                "protection": rng.choice(
                    ["none", "none", "none", "fast-failover", "one-plus-one"]
                ),
                "class": "real-time",
                "packet_bits": packet,
                "period_s": packet / rate,
            }
        )
    if with_failure:
        ring_links = [l["id"] for l in b.doc["links"]]
        b.doc["failures"].append(
            {
                "time_s": round(rng.uniform(0.5, duration_s * 0.6), 3),
                "target": rng.choice(ring_links),
                "event": "down",
            }
        )
    b.doc["sim"] = {"seed": seed, "duration_s": duration_s, "replicas": 1}
    return b.doc
