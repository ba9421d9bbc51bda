"""Rule and meter management for the simulated switches.

Synthesizes match/action flow rules from path embeddings (per protection
mode), installs them into per-switch flow tables with capacity limits and
transactional rollback, polices with token-bucket meters, aggregates transit
traffic under per-segment labels, and reports per-intent KPIs from
simulation traces.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from .errors import CapacityError, UnknownEntityError
from .pathing import PathEmbedding, path_nodes
from .topology import SWITCH_LIKE, NetworkGraph

LOCAL_PORT = -1  # output(LOCAL): deliver at this node


@dataclass(frozen=True)
class Match:
    in_port: int | None = None
    tag: int | None = None
    label: int | None = None
    src: str | None = None
    dst: str | None = None
    proto: str | None = None

    def matches(self, header: dict, in_port: int | None) -> bool:
        if self.in_port is not None and in_port != self.in_port:
            return False
        if self.tag is not None and header.get("tag") != self.tag:
            return False
        if self.label is not None and header.get("label") != self.label:
            return False
        if self.src is not None and header.get("src") != self.src:
            return False
        if self.dst is not None and header.get("dst") != self.dst:
            return False
        if self.proto is not None and header.get("proto") != self.proto:
            return False
        return True

    def disjoint_from(self, other: "Match") -> bool:
        """True when no packet can match both (some field pinned differently)."""
        for name in ("in_port", "tag", "label", "src", "dst", "proto"):
            a, b = getattr(self, name), getattr(other, name)
            if a is not None and b is not None and a != b:
                return True
        return False


@dataclass
class FlowRule:
    switch: str
    priority: int
    match: Match
    actions: list[tuple]
    cookie: tuple[str, str]  # (flow id, tenant)
    table: int = 0
    dedup: bool = False
    vnf: str | None = None  # set on chain stitch rules; the waypoint visited

    def __post_init__(self):
        outputs = [a for a in self.actions if a[0] == "output"]
        if len(outputs) > 1:
            raise ValueError("at most one output action per rule")

    def to_dict(self) -> dict:
        return {
            "switch": self.switch,
            "priority": self.priority,
            "match": {
                k: v
                for k, v in self.match.__dict__.items()
                if v is not None
            },
            "actions": [list(a) for a in self.actions],
            "cookie": list(self.cookie),
            "dedup": self.dedup,
        }


@dataclass
class Meter:
    meter_id: str
    rate_bps: float
    burst_bits: float
    exceed_action: str = "drop"

    def __post_init__(self):
        if self.rate_bps <= 0:
            raise ValueError("meter rate must be > 0")


@dataclass
class KpiReport:
    intent_id: str
    window_s: float
    observed_max_delay_s: float | None
    observed_mean_delay_s: float | None
    delivered_packets: int
    lost_packets: int
    bound_s: float | None

    def to_dict(self) -> dict:
        return {
            "intent_id": self.intent_id,
            "window_s": self.window_s,
            "observed_max_delay_s": self.observed_max_delay_s,
            "observed_mean_delay_s": self.observed_mean_delay_s,
            "delivered_packets": self.delivered_packets,
            "lost_packets": self.lost_packets,
            "bound_s": self.bound_s,
        }


class SwitchTable:
    def __init__(self, node_id: str, capacity: int):
        self.node_id = node_id
        self.capacity = capacity
        self.rules: list[FlowRule] = []

    def install(self, rule: FlowRule) -> None:
        if len(self.rules) >= self.capacity:
            raise CapacityError(f"table-full at {self.node_id}")
        self.rules.append(rule)
        self.rules.sort(key=lambda r: -r.priority)

    def remove_cookie(self, flow_id: str) -> int:
        before = len(self.rules)
        self.rules = [r for r in self.rules if r.cookie[0] != flow_id]
        return before - len(self.rules)

    def lookup(self, header: dict, in_port: int | None) -> FlowRule | None:
        for rule in self.rules:
            if rule.match.matches(header, in_port):
                return rule
        return None


@dataclass
class TransitSegment:
    offer_id: str
    label: int
    links: list[str]
    ingress: str
    egress: str
    flows: set[str] = field(default_factory=set)


class ResourceLayer:
    """RMG/RMT pair: rule embedding plus state/monitoring exposure."""

    def __init__(self, graph: NetworkGraph, label_limit: int = 100_000,
                 store_put=None):
        self.graph = graph
        self.tables: dict[str, SwitchTable] = {}
        self.meters: dict[tuple[str, str], Meter] = {}
        self.transit: dict[str, TransitSegment] = {}
        self.store_put = store_put or (lambda key, value: None)
        self._labels = itertools.count(16)
        self._label_limit = label_limit
        self.rules_by_flow: dict[str, list[FlowRule]] = {}

    # -- device state ---------------------------------------------------------

    def table(self, node_id: str) -> SwitchTable:
        node = self.graph.node(node_id)
        if node_id not in self.tables:
            self.tables[node_id] = SwitchTable(node_id, node.table_capacity)
        return self.tables[node_id]

    def get_topology(self) -> dict:
        return self.graph.snapshot()

    def get_device_features(self, node_id: str) -> dict:
        node = self.graph.node(node_id)
        queues = [
            {
                "port": p,
                "queue": q.queue_id,
                "rate_bps": q.rate_bps,
                "latency_s": q.latency_s,
            }
            for (n, p, _qid), q in sorted(self.graph.queues.items())
            if n == node_id
        ]
        return {
            "node": node_id,
            "kind": node.kind,
            "table_capacity": node.table_capacity,
            "rules_installed": len(self.tables.get(node_id, SwitchTable(node_id, 0)).rules),
            "queues": queues,
        }

    def alloc_label(self) -> int:
        label = next(self._labels)
        if label >= self._label_limit:
            raise CapacityError("label exhaustion")
        return label

    # -- rule synthesis ---------------------------------------------------------

    def _switchlike(self, node_id: str) -> bool:
        return self.graph.node(node_id).kind in SWITCH_LIKE

    def _hops(self, src: str, links: list[str]):
        """[(node, in_port, out_port, link)] for each transmitting node."""
        out = []
        node = src
        in_port = None
        for lid in links:
            link = self.graph.link(lid)
            egress = link.port_of(node)
            out.append((node, in_port, egress.port, link))
            nxt = link.other(node)
            node, in_port = nxt.node, nxt.port
        return out, node, in_port

    def expected_rule_count(self, embedding: PathEmbedding) -> int:
        """Exact per-mode rule-count contract for a committed embedding:
        one rule per switch-like transmitting node per path, the first of
        which is replaced by the single ingress duplication/failover rule for
        protected flows, plus one egress deliver/dedup rule for switch-like
        destinations."""
        spec = embedding.spec
        deliver = 1 if self._switchlike(spec.dst) else 0
        if embedding.backup is None:
            hops, _dst, _ = self._hops(spec.src, embedding.primary)
            forward = sum(1 for (n, *_r) in hops if self._switchlike(n))
            return forward + deliver
        total = deliver
        has_ingress = False
        for _copy, links in embedding.paths():
            hops, _dst, _ = self._hops(spec.src, links)
            switch_hops = [n for (n, *_r) in hops if self._switchlike(n)]
            if switch_hops:
                has_ingress = True
                total += len(switch_hops) - 1
        # one ingress duplication/failover rule replaces both first-hop rules
        return total + (1 if has_ingress else 0)

    def embed_rules(
        self,
        embedding: PathEmbedding,
        vtn_tag: int | None,
        police: bool = False,
    ) -> list[FlowRule]:
        """Synthesize and install the full rule set for a committed embedding.

        Real-time rules carry set_queue; one-plus-one installs an ingress
        duplication rule and an egress dedup rule; fast-failover preinstalls
        the backup branch behind a local failover group. On table overflow
        every rule installed so far is rolled back and CapacityError raised.
        """
        spec = embedding.spec
        rules: list[FlowRule] = []
        if embedding.backup is None:
            rules = self._plain_rules(embedding, vtn_tag, police)
        else:
            rules = self._protected_rules(embedding, vtn_tag, police)

        installed: list[FlowRule] = []
        try:
            for rule in rules:
                self.table(rule.switch).install(rule)
                installed.append(rule)
        except CapacityError:
            for rule in installed:
                self.tables[rule.switch].rules.remove(rule)
            raise
        self.rules_by_flow[spec.flow_id] = rules
        self.store_put(
            f"rules:{spec.flow_id}", [r.to_dict() for r in rules]
        )
        return rules

    def _queue_action(self, embedding: PathEmbedding, copy_name: str,
                      hop_index: int) -> list[tuple]:
        if embedding.spec.flow_class != "real-time":
            return []
        qid = embedding.queue_assignment[copy_name][hop_index]
        return [("set_queue", qid)]

    def _maybe_meter(self, spec, police: bool) -> list[tuple]:
        if not police:
            return []
        meter = Meter(
            meter_id=f"meter:{spec.flow_id}",
            rate_bps=spec.arrival.rate,
            burst_bits=spec.arrival.burst,
        )
        self.install_meter(spec.src if self._switchlike(spec.src) else None, meter)
        return [("meter", meter.meter_id)]

    def _plain_rules(self, embedding: PathEmbedding, vtn_tag, police):
        spec = embedding.spec
        hops, dst, dst_in_port = self._hops(spec.src, embedding.primary)
        rules: list[FlowRule] = []
        seen_ingress = False
        for i, (node, in_port, out_port, link) in enumerate(hops):
            if not self._switchlike(node):
                continue
            last_before_host = (
                i == len(hops) - 1 and not self._switchlike(dst)
            )
            actions: list[tuple] = []
            if not seen_ingress:
                match = Match(in_port=in_port, src=spec.src, dst=spec.dst,
                              proto=spec.flow_id)
                if vtn_tag is not None:
                    actions.append(("push_tag", vtn_tag))
                actions.extend(self._maybe_meter(spec, police))
                seen_ingress = True
            else:
                match = Match(tag=vtn_tag, src=spec.src, dst=spec.dst,
                              proto=spec.flow_id)
            if last_before_host and vtn_tag is not None:
                actions.append(("pop_tag",))
            actions.extend(self._queue_action(embedding, "primary", i))
            actions.append(("output", out_port))
            rules.append(
                FlowRule(node, 100, match, actions, (spec.flow_id, spec.tenant))
            )
        if self._switchlike(dst):
            match = Match(tag=vtn_tag, src=spec.src, dst=spec.dst,
                          proto=spec.flow_id)
            actions = []
            if vtn_tag is not None:
                actions.append(("pop_tag",))
            actions.append(("output", LOCAL_PORT))
            rules.append(
                FlowRule(dst, 100, match, actions, (spec.flow_id, spec.tenant))
            )
        return rules

    def _protected_rules(self, embedding: PathEmbedding, vtn_tag, police):
        spec = embedding.spec
        label_a, label_b = self.alloc_label(), self.alloc_label()
        rules: list[FlowRule] = []
        names = {0: ("primary", label_a), 1: ("backup", label_b)}

        branches = []
        ingress_node = None
        ingress_in_port = None
        for copy, links in embedding.paths():
            copy_name, label = names[copy]
            hops, dst, _ = self._hops(spec.src, links)
            switch_idxs = [
                i for i, (n, *_rest) in enumerate(hops) if self._switchlike(n)
            ]
            if not switch_idxs:
                # endpoint attaches straight to the destination switch; there
                # is no node to duplicate at, only delivery
                continue
            first = switch_idxs[0]
            node, in_port, out_port, _link = hops[first]
            ingress_node, ingress_in_port = node, in_port
            branch = {"label": label, "port": out_port}
            if spec.flow_class == "real-time":
                branch["queue"] = embedding.queue_assignment[copy_name][first]
            branches.append(branch)
            for i in switch_idxs[1:]:
                n, _ip, op, _l = hops[i]
                last_before_host = (
                    i == len(hops) - 1 and not self._switchlike(dst)
                )
                actions: list[tuple] = []
                if last_before_host:
                    actions.append(("pop_label",))
                    if vtn_tag is not None:
                        actions.append(("pop_tag",))
                actions.extend(self._queue_action(embedding, copy_name, i))
                actions.append(("output", op))
                rules.append(
                    FlowRule(
                        n, 100,
                        Match(tag=vtn_tag, label=label, proto=spec.flow_id),
                        actions, (spec.flow_id, spec.tenant),
                    )
                )

        if branches:
            group = "duplicate" if spec.protection == "one-plus-one" else "failover"
            actions = []
            if vtn_tag is not None:
                actions.append(("push_tag", vtn_tag))
            actions.extend(self._maybe_meter(spec, police))
            if group == "duplicate":
                actions.append(("duplicate", branches))
            else:
                actions.append(("failover", {"primary": branches[0],
                                             "backup": branches[1]}))
            rules.append(
                FlowRule(
                    ingress_node, 110,
                    Match(in_port=ingress_in_port, src=spec.src,
                          dst=spec.dst, proto=spec.flow_id),
                    actions, (spec.flow_id, spec.tenant),
                )
            )

        dst = path_nodes(self.graph, spec.src, embedding.primary)[-1]
        if self._switchlike(dst):
            actions = [("pop_label",)]
            if vtn_tag is not None:
                actions.append(("pop_tag",))
            actions.append(("output", LOCAL_PORT))
            rules.append(
                FlowRule(
                    dst, 100,
                    Match(tag=vtn_tag, src=spec.src, dst=spec.dst,
                          proto=spec.flow_id),
                    actions, (spec.flow_id, spec.tenant), dedup=True,
                )
            )
        return rules

    def embed_leg_rules(
        self,
        embedding: PathEmbedding,
        vtn_tag: int | None,
        e2e_src: str,
        e2e_dst: str,
        exit_port: int | None = None,
        entry_in_port: int | None = None,
        police: bool = False,
        proto: str | None = None,
    ) -> list[FlowRule]:
        """Rules for one intra-domain leg of an inter-domain flow.

        The embedding terminates at a border gateway (or starts at one), but
        the installed matches use the end-to-end endpoints so packets flow
        straight through; `exit_port` forwards out of the domain at the leg's
        gateway, `entry_in_port` pins the ingress match on the receiving
        side. Tags stay intra-domain: pushed at the ingress, popped at the
        exit gateway or before the destination host.
        """
        spec = embedding.spec
        hops, leg_dst, _ = self._hops(spec.src, embedding.primary)
        rules: list[FlowRule] = []
        seen_ingress = False
        for i, (node, in_port, out_port, _link) in enumerate(hops):
            if not self._switchlike(node):
                continue
            actions: list[tuple] = []
            if not seen_ingress:
                pin = in_port if in_port is not None else entry_in_port
                match = Match(in_port=pin, src=e2e_src, dst=e2e_dst,
                              proto=proto)
                if vtn_tag is not None:
                    actions.append(("push_tag", vtn_tag))
                actions.extend(self._maybe_meter(spec, police))
                seen_ingress = True
            else:
                match = Match(tag=vtn_tag, src=e2e_src, dst=e2e_dst,
                              proto=proto)
            last_before_host = (
                i == len(hops) - 1
                and not self._switchlike(leg_dst)
                and exit_port is None
            )
            if last_before_host and vtn_tag is not None:
                actions.append(("pop_tag",))
            actions.extend(self._queue_action(embedding, "primary", i))
            actions.append(("output", out_port))
            rules.append(
                FlowRule(node, 100, match, actions, (spec.flow_id, spec.tenant))
            )
        if exit_port is not None:
            actions = []
            if vtn_tag is not None:
                actions.append(("pop_tag",))
            actions.append(("output", exit_port))
            rules.append(
                FlowRule(
                    leg_dst, 100,
                    Match(tag=vtn_tag, src=e2e_src, dst=e2e_dst, proto=proto),
                    actions, (spec.flow_id, spec.tenant),
                )
            )
        elif self._switchlike(leg_dst):
            actions = []
            if vtn_tag is not None:
                actions.append(("pop_tag",))
            actions.append(("output", LOCAL_PORT))
            rules.append(
                FlowRule(
                    leg_dst, 100,
                    Match(tag=vtn_tag, src=e2e_src, dst=e2e_dst, proto=proto),
                    actions, (spec.flow_id, spec.tenant),
                )
            )

        installed: list[FlowRule] = []
        try:
            for rule in rules:
                self.table(rule.switch).install(rule)
                installed.append(rule)
        except CapacityError:
            for rule in installed:
                self.tables[rule.switch].rules.remove(rule)
            raise
        self.rules_by_flow[spec.flow_id] = rules
        self.store_put(f"rules:{spec.flow_id}", [r.to_dict() for r in rules])
        return rules

    def remove_rules(self, flow_id: str) -> None:
        for table in self.tables.values():
            table.remove_cookie(flow_id)
        self.rules_by_flow.pop(flow_id, None)
        self.store_put(f"rules:{flow_id}", None)

    # -- meters ---------------------------------------------------------------

    def install_meter(self, switch: str | None, meter: Meter) -> None:
        if switch is not None and switch not in self.graph.nodes:
            raise UnknownEntityError(f"unknown switch {switch!r}")
        self.meters[(switch or "*", meter.meter_id)] = meter

    def meter_by_id(self, meter_id: str) -> Meter | None:
        for (_sw, mid), meter in self.meters.items():
            if mid == meter_id:
                return meter
        return None

    # -- transit segments --------------------------------------------------------

    def embed_transit_rules(
        self,
        offer_id: str,
        links: list[str],
        ingress: str,
        egress_peer_port: int,
        flow: tuple[str, str],
        tenant: str = "_transit",
    ) -> list[FlowRule]:
        """Label-switched transit: the ingress gateway pushes the segment
        label per flow; core switches carry one rule per segment; the egress
        gateway pops and forwards toward the next domain."""
        seg = self.transit.get(offer_id)
        new_rules: list[FlowRule] = []
        if seg is None:
            label = self.alloc_label()
            hops, egress_node, _ = self._hops(ingress, links)
            seg = TransitSegment(offer_id, label, list(links), ingress,
                                 egress_node)
            self.transit[offer_id] = seg
            # core rules: every transmitting node after the ingress
            for i, (node, _ip, out_port, _link) in enumerate(hops):
                if i == 0:
                    continue
                rule = FlowRule(
                    node, 90, Match(label=label),
                    [("set_queue", 1), ("output", out_port)],
                    (f"seg:{offer_id}", tenant),
                )
                self.table(node).install(rule)
                new_rules.append(rule)
            pop_rule = FlowRule(
                egress_node, 90, Match(label=label),
                [("pop_label",), ("output", egress_peer_port)],
                (f"seg:{offer_id}", tenant),
            )
            self.table(egress_node).install(pop_rule)
            new_rules.append(pop_rule)

        src, dst = flow
        hops, _, _ = self._hops(ingress, links)
        first_out = hops[0][2] if hops else egress_peer_port
        ingress_rule = FlowRule(
            ingress, 95, Match(src=src, dst=dst),
            [("push_label", seg.label), ("set_queue", 1), ("output", first_out)]
            if hops
            else [("output", egress_peer_port)],
            (f"segflow:{offer_id}:{src}:{dst}", tenant),
        )
        self.table(ingress).install(ingress_rule)
        new_rules.append(ingress_rule)
        seg.flows.add(f"{src}->{dst}")
        self.store_put(f"transit:{offer_id}", {
            "label": seg.label, "flows": sorted(seg.flows),
        })
        return new_rules

    def release_transit(self, offer_id: str) -> None:
        seg = self.transit.pop(offer_id, None)
        if seg is None:
            return
        for table in self.tables.values():
            table.rules = [
                r for r in table.rules
                if not r.cookie[0].startswith(f"seg:{offer_id}")
                and not r.cookie[0].startswith(f"segflow:{offer_id}")
            ]
        self.store_put(f"transit:{offer_id}", None)

    def core_rule_count(self, offer_id: str) -> int:
        seg = self.transit.get(offer_id)
        if seg is None:
            return 0
        return sum(
            1
            for table in self.tables.values()
            for r in table.rules
            if r.cookie[0] == f"seg:{offer_id}"
        )

    # -- isolation and persistence checks ------------------------------------------

    def check_isolation(self) -> None:
        """Cross-tenant rules on any switch must have disjoint match spaces."""
        for table in self.tables.values():
            for i, a in enumerate(table.rules):
                for b in table.rules[i + 1:]:
                    if a.cookie[1] == b.cookie[1]:
                        continue
                    if not a.match.disjoint_from(b.match):
                        raise AssertionError(
                            f"overlapping cross-tenant rules at {table.node_id}: "
                            f"{a.cookie} vs {b.cookie}"
                        )

    def installed_rules(self) -> list[FlowRule]:
        return [r for t in self.tables.values() for r in t.rules]

    # -- monitoring ----------------------------------------------------------------

    def monitor_intent(
        self,
        trace: list[dict],
        intent_id: str,
        window_s: float,
        now: float,
        bound_s: float | None,
        probe_flow: str | None = None,
    ) -> KpiReport:
        """KPI report over the trailing window of a simulation trace.

        In inter-domain (probe) mode, statistics come from the probe flow's
        packets instead of the intent's own counters.
        """
        flow = probe_flow or intent_id
        lo = now - window_s
        delays = []
        delivered = 0
        lost = 0
        for rec in trace:
            if rec.get("flow") != flow:
                continue
            t = rec["t"]
            if t < lo or t > now:
                continue
            if rec["kind"] == "deliver":
                delivered += 1
                delays.append(rec["delay_s"])
            elif rec["kind"] == "drop":
                lost += 1
        return KpiReport(
            intent_id=intent_id,
            window_s=window_s,
            observed_max_delay_s=max(delays) if delays else None,
            observed_mean_delay_s=(sum(delays) / len(delays)) if delays else None,
            delivered_packets=delivered,
            lost_packets=lost,
            bound_s=bound_s,
        )
