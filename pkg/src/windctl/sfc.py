"""Service chaining and IIoT gateway integration.

VNFs are logical forwarding waypoints placed on capacity-slotted micro-cloud
or IIoT-gateway hosts. Chains route flows through waypoints with per-segment
label switching; sensors bind into tenant slices through one proxy VNF per
(sensor, tenant) pair at the gateway's software switch.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

from .errors import AdmissionError, CapacityError, UnknownEntityError
from .pathing import FlowSpec, PathEmbedding, PathEngine
from .resources import FlowRule, Match, ResourceLayer
from .topology import NetworkGraph

VNF_KINDS = {"firewall", "ids", "dpi", "honeypot", "sensor-proxy"}


@dataclass
class VnfInstance:
    vnf_id: str
    kind: str
    host: str
    external_port: tuple[str, int]
    slots: int = 1
    alive: bool = True


@dataclass
class ServiceChain:
    chain_id: str
    ordered_vnfs: list[str]


@dataclass
class SensorBinding:
    sensor: str
    tenant: str
    vtn_id: str
    proxy_vnf: str


@dataclass
class ChainEmbedding:
    flow_id: str
    segments: list[PathEmbedding]
    labels: list[int]
    worst_case_delay_s: float | None

    @property
    def all_links(self) -> list[str]:
        return [lid for seg in self.segments for lid in seg.primary]


class SfcManager:
    def __init__(self, graph: NetworkGraph, engine: PathEngine,
                 resources: ResourceLayer, store_put=None):
        self.graph = graph
        self.engine = engine
        self.resources = resources
        self.store_put = store_put or (lambda key, value: None)
        self.vnfs: dict[str, VnfInstance] = {}
        self.chains: dict[str, ServiceChain] = {}
        self.vtn_chain: dict[str, str] = {}
        self.bindings: dict[tuple[str, str], SensorBinding] = {}
        self.used_slots: dict[str, int] = {}
        self._ids = itertools.count(1)

    # -- placement ------------------------------------------------------------

    def _hosts(self) -> list[str]:
        return sorted(
            n.id
            for n in self.graph.nodes.values()
            if n.kind in ("micro-cloud", "iiot-gateway") and n.slots > 0
        )

    def free_slots(self, host: str) -> int:
        return self.graph.node(host).slots - self.used_slots.get(host, 0)

    def instantiate_vnf(self, kind: str, preferred_host: str | None = None,
                        slots: int = 1) -> VnfInstance:
        """Place on the preferred host when it fits, else least loaded."""
        if kind not in VNF_KINDS:
            raise UnknownEntityError(f"unknown VNF kind {kind!r}")
        host = None
        if preferred_host is not None and self.free_slots(preferred_host) >= slots:
            host = preferred_host
        else:
            candidates = [h for h in self._hosts() if self.free_slots(h) >= slots]
            if candidates:
                host = max(candidates, key=lambda h: (self.free_slots(h), ),
                           default=None)
                # ties by free slots resolve to the lowest node id
                best = max(self.free_slots(h) for h in candidates)
                host = sorted(h for h in candidates if self.free_slots(h) == best)[0]
        if host is None:
            raise CapacityError(f"no host has {slots} free slots for {kind}")
        vnf_id = f"vnf-{next(self._ids)}"
        ports = sorted(self.graph.ports_of(host))
        instance = VnfInstance(vnf_id, kind, host, (host, ports[0]), slots)
        self.vnfs[vnf_id] = instance
        self.used_slots[host] = self.used_slots.get(host, 0) + slots
        self.store_put(f"vnf:{vnf_id}", {"kind": kind, "host": host})
        return instance

    def teardown_vnf(self, vnf_id: str) -> None:
        instance = self.vnfs.pop(vnf_id, None)
        if instance is None:
            raise UnknownEntityError(f"unknown VNF {vnf_id!r}")
        self.used_slots[instance.host] -= instance.slots
        self.store_put(f"vnf:{vnf_id}", None)

    def assert_slot_accounting(self) -> None:
        for host, used in self.used_slots.items():
            if used < 0 or used > self.graph.node(host).slots:
                raise AssertionError(f"slot accounting broken at {host}: {used}")

    # -- chains -----------------------------------------------------------------

    def create_chain(self, ordered_vnf_ids: list[str]) -> str:
        if not ordered_vnf_ids:
            raise UnknownEntityError("chain must name at least one VNF")
        for vid in ordered_vnf_ids:
            instance = self.vnfs.get(vid)
            if instance is None or not instance.alive:
                raise UnknownEntityError(f"dangling VNF {vid!r} in chain")
        chain_id = f"chain-{next(self._ids)}"
        self.chains[chain_id] = ServiceChain(chain_id, list(ordered_vnf_ids))
        self.store_put(f"chain:{chain_id}", list(ordered_vnf_ids))
        return chain_id

    def map_vtn_to_chain(self, vtn_id: str, chain_id: str) -> None:
        if chain_id not in self.chains:
            raise UnknownEntityError(f"unknown chain {chain_id!r}")
        self.vtn_chain[vtn_id] = chain_id

    def unmap_vtn(self, vtn_id: str) -> None:
        self.vtn_chain.pop(vtn_id, None)

    def chain_for_vtn(self, vtn_id: str) -> ServiceChain | None:
        chain_id = self.vtn_chain.get(vtn_id)
        return self.chains.get(chain_id) if chain_id else None

    # -- chained routing -----------------------------------------------------------

    def route_through_chain(self, spec: FlowSpec, chain: ServiceChain,
                            vtn_tag: int | None) -> ChainEmbedding:
        """Concatenated per-segment embedding through the chain waypoints.

        Greedy: each leg takes the cheapest feasible path within the
        remaining delay budget. Any infeasible leg rolls back the whole
        request, leaving nothing reserved.
        """
        waypoints = [self.vnfs[v].host for v in chain.ordered_vnfs]
        stops = [spec.src] + waypoints + [spec.dst]
        segments: list[PathEmbedding] = []
        spent = 0.0
        try:
            for i in range(len(stops) - 1):
                remaining = (
                    None
                    if spec.delay_req_s is None
                    else spec.delay_req_s - spent
                )
                if remaining is not None and remaining <= 0:
                    raise AdmissionError(
                        f"chain budget exhausted before leg {i}",
                        constraint="delay:chain",
                    )
                seg_spec = FlowSpec(
                    flow_id=f"{spec.flow_id}#seg{i}",
                    src=stops[i],
                    dst=stops[i + 1],
                    arrival=spec.arrival,
                    delay_req_s=remaining,
                    protection="none",
                    tenant=spec.tenant,
                    flow_class=spec.flow_class,
                )
                segment = self.engine.embed_flow(seg_spec)
                segments.append(segment)
                if segment.worst_case_delay_s is not None:
                    spent += segment.worst_case_delay_s
        except AdmissionError:
            for segment in segments:
                self.engine.release_flow(segment.flow_id)
            raise

        labels = [self.resources.alloc_label() for _ in segments]
        rules = self._chain_rules(spec, segments, labels, chain, vtn_tag)
        installed: list[FlowRule] = []
        try:
            for rule in rules:
                self.resources.table(rule.switch).install(rule)
                installed.append(rule)
        except CapacityError:
            for rule in installed:
                self.resources.tables[rule.switch].rules.remove(rule)
            for segment in segments:
                self.engine.release_flow(segment.flow_id)
            raise
        self.resources.rules_by_flow[spec.flow_id] = rules
        self.store_put(
            f"rules:{spec.flow_id}", [r.to_dict() for r in rules]
        )
        bound = spent if spec.flow_class == "real-time" else None
        return ChainEmbedding(spec.flow_id, segments, labels, bound)

    def _chain_rules(self, spec: FlowSpec, segments, labels, chain, vtn_tag):
        """Label-switched rules: one label per leg, stitched at each VNF host."""
        rules: list[FlowRule] = []
        switchlike = self.resources._switchlike
        for i, segment in enumerate(segments):
            hops, seg_dst, _ = self.resources._hops(
                segment.spec.src, segment.primary
            )
            qa = segment.queue_assignment["primary"]
            is_last_leg = i == len(segments) - 1
            for j, (node, in_port, out_port, _link) in enumerate(hops):
                if not switchlike(node):
                    continue
                first_switch = all(
                    not switchlike(hops[k][0]) for k in range(j)
                )
                actions: list[tuple] = []
                if i == 0 and first_switch:
                    match = Match(in_port=in_port, src=spec.src,
                                  dst=spec.dst, proto=spec.flow_id)
                    if vtn_tag is not None:
                        actions.append(("push_tag", vtn_tag))
                    actions.append(("push_label", labels[0]))
                elif first_switch:
                    # stitch at the VNF host: swap leg labels
                    match = Match(tag=vtn_tag, label=labels[i - 1],
                                  proto=spec.flow_id)
                    actions.append(("pop_label",))
                    actions.append(("push_label", labels[i]))
                else:
                    match = Match(tag=vtn_tag, label=labels[i],
                                  proto=spec.flow_id)
                last_before_host = (
                    is_last_leg
                    and j == len(hops) - 1
                    and not switchlike(seg_dst)
                )
                if last_before_host:
                    actions.append(("pop_label",))
                    if vtn_tag is not None:
                        actions.append(("pop_tag",))
                if spec.flow_class == "real-time":
                    actions.append(("set_queue", qa[j]))
                actions.append(("output", out_port))
                rule = FlowRule(
                    node, 105, match, actions, (spec.flow_id, spec.tenant)
                )
                if first_switch and i > 0:
                    rule.vnf = chain.ordered_vnfs[i - 1]
                rules.append(rule)
            if is_last_leg and switchlike(seg_dst):
                actions = [("pop_label",)]
                if vtn_tag is not None:
                    actions.append(("pop_tag",))
                actions.append(("output", -1))
                rules.append(
                    FlowRule(
                        seg_dst, 105,
                        Match(tag=vtn_tag, label=labels[-1],
                              proto=spec.flow_id),
                        actions, (spec.flow_id, spec.tenant),
                    )
                )
        return rules

    def release_chain_flow(self, chain_embedding: ChainEmbedding) -> None:
        for segment in chain_embedding.segments:
            self.engine.release_flow(segment.flow_id)
        self.resources.remove_rules(chain_embedding.flow_id)

    # -- sensors ----------------------------------------------------------------

    def bind_sensor(self, sensor: str, tenant: str, vtn_id: str) -> SensorBinding:
        """One proxy VNF per (sensor, tenant) pair on the sensor's gateway.

        Tagging of the sensor's traffic into the slice happens through the
        normal connectivity path once the gateway port is mapped as a
        vinterface of the tenant VTN."""
        existing = self.bindings.get((sensor, tenant))
        if existing is not None:
            return existing
        node = self.graph.node(sensor)
        if node.kind != "sensor":
            raise UnknownEntityError(f"{sensor!r} is not a sensor")
        _link, _local, gateway = self.graph.attachment(sensor)
        if self.graph.node(gateway).kind != "iiot-gateway":
            raise UnknownEntityError(
                f"sensor {sensor!r} does not attach to an iiot-gateway"
            )
        proxy = self.instantiate_vnf("sensor-proxy", preferred_host=gateway)
        if proxy.host != gateway:
            # the proxy must terminate the sensor on its own gateway
            self.teardown_vnf(proxy.vnf_id)
            raise CapacityError(f"gateway {gateway!r} has no free slots")
        binding = SensorBinding(sensor, tenant, vtn_id, proxy.vnf_id)
        self.bindings[(sensor, tenant)] = binding
        self.store_put(
            f"binding:{sensor}:{tenant}",
            {"vtn": vtn_id, "proxy": proxy.vnf_id, "gateway": gateway},
        )
        return binding
