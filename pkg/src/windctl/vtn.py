"""Tenant slicing: VTN lifecycle, interface mapping with tag isolation, the
gateway interface for inter-domain exits, and tenant connectivity requests."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from .errors import (
    CapacityError,
    ConfigurationError,
    IsolationError,
    UnknownEntityError,
)
from .pathing import FlowSpec, PathEngine, PathEmbedding
from .resources import ResourceLayer
from .security import Intent
from .topology import NetworkGraph

MAX_TAG = 4094


@dataclass
class VInterface:
    vif_id: str
    node: str
    port: int


@dataclass
class VBridge:
    vbridge_id: str
    tag: int
    vinterfaces: dict[str, VInterface] = field(default_factory=dict)


@dataclass
class Vtn:
    vtn_id: str
    tenant: str
    service: str
    vbridges: dict[str, VBridge] = field(default_factory=dict)
    gateway_interface: tuple[str, str] | None = None  # (vbridge, vif)

    def all_ports(self) -> set[tuple[str, int]]:
        return {
            (vif.node, vif.port)
            for vb in self.vbridges.values()
            for vif in vb.vinterfaces.values()
        }


@dataclass
class IntentResult:
    intent_id: str
    flow_id: str
    worst_case_delay_s: float | None
    embedding: PathEmbedding


class VtnManager:
    """Creates isolated slices and maps them onto physical ports."""

    def __init__(self, graph: NetworkGraph, engine: PathEngine,
                 resources: ResourceLayer, store_put=None):
        self.graph = graph
        self.engine = engine
        self.resources = resources
        self.store_put = store_put or (lambda key, value: None)
        self.vtns: dict[str, Vtn] = {}
        self.tag_owners: dict[tuple[str, int, int], str] = {}  # (node,port,tag)->vtn
        self.intents: dict[str, IntentResult] = {}
        self._ids = itertools.count(1)
        self._tags = itertools.count(10)

    # -- lifecycle -----------------------------------------------------------

    def create_vtn(self, tenant: str, service: str | None = None) -> str:
        service = service or tenant
        for vtn in self.vtns.values():
            if vtn.tenant == tenant and vtn.service == service:
                raise ConfigurationError(
                    f"service {service!r} of tenant {tenant!r} already holds "
                    f"VTN {vtn.vtn_id}"
                )
        vtn_id = f"vtn-{next(self._ids)}"
        self.vtns[vtn_id] = Vtn(vtn_id, tenant, service)
        self.store_put(f"vtn:{vtn_id}", {"tenant": tenant, "service": service})
        return vtn_id

    def vtn(self, vtn_id: str) -> Vtn:
        try:
            return self.vtns[vtn_id]
        except KeyError:
            raise UnknownEntityError(f"unknown VTN {vtn_id!r}") from None

    def vtn_for_tenant(self, tenant: str, service: str | None = None) -> Vtn | None:
        service = service or tenant
        for vtn in self.vtns.values():
            if vtn.tenant == tenant and vtn.service == service:
                return vtn
        return None

    def _vbridge(self, vtn: Vtn, vbridge_id: str, tag: int | None) -> VBridge:
        if vbridge_id not in vtn.vbridges:
            if tag is None:
                tag = next(self._tags)
                if tag > MAX_TAG:
                    raise CapacityError("slice tag space exhausted")
            vtn.vbridges[vbridge_id] = VBridge(vbridge_id, tag)
        return vtn.vbridges[vbridge_id]

    def map_interface(self, vtn_id: str, vbridge_id: str, node: str, port: int,
                      tag: int | None = None) -> str:
        """Map a virtual interface onto a physical port.

        The slice tag must be free on that port; a collision is an isolation
        error, never silently shared."""
        vtn = self.vtn(vtn_id)
        if port not in self.graph.ports_of(node):
            raise UnknownEntityError(f"no port {port} on node {node!r}")
        vb = self._vbridge(vtn, vbridge_id, tag)
        if tag is not None and vb.tag != tag:
            raise ConfigurationError(
                f"vbridge {vbridge_id!r} already carries tag {vb.tag}"
            )
        key = (node, port, vb.tag)
        owner = self.tag_owners.get(key)
        if owner is not None and owner != vtn_id:
            raise IsolationError(
                f"tag {vb.tag} already used on {node}:{port} by {owner}"
            )
        self.tag_owners[key] = vtn_id
        vif_id = f"vif-{next(self._ids)}"
        vb.vinterfaces[vif_id] = VInterface(vif_id, node, port)
        self.store_put(
            f"vif:{vtn_id}:{vif_id}", {"node": node, "port": port, "tag": vb.tag}
        )
        return vif_id

    def set_gateway(self, vtn_id: str, vbridge_id: str, vif_id: str) -> None:
        """Designate the slice's single inter-domain exit interface."""
        vtn = self.vtn(vtn_id)
        vb = vtn.vbridges.get(vbridge_id)
        if vb is None or vif_id not in vb.vinterfaces:
            raise UnknownEntityError(f"unknown vinterface {vbridge_id}/{vif_id}")
        vif = vb.vinterfaces[vif_id]
        if self.graph.node(vif.node).kind != "border-gateway":
            raise ConfigurationError(
                f"gateway interface must map a border-gateway port, got "
                f"{vif.node!r}"
            )
        vtn.gateway_interface = (vbridge_id, vif_id)

    def gateway_address(self, vtn_id: str) -> str | None:
        vtn = self.vtn(vtn_id)
        if vtn.gateway_interface is None:
            return None
        vb, vif = vtn.gateway_interface
        return vtn.vbridges[vb].vinterfaces[vif].node

    def tag_of(self, vtn_id: str) -> int:
        vtn = self.vtn(vtn_id)
        if not vtn.vbridges:
            raise ConfigurationError(f"VTN {vtn_id} has no vbridges")
        return next(iter(vtn.vbridges.values())).tag

    # -- endpoint resolution ----------------------------------------------------

    def endpoint_in_vtn(self, vtn: Vtn, address: str) -> bool:
        """An address is inside the slice when its attachment port carries a
        vinterface, or when it is the slice's gateway node."""
        if self.gateway_address(vtn.vtn_id) == address:
            return True
        node = self.graph.node(address)
        if node.kind in ("host", "sensor", "controller"):
            link, _local, peer = self.graph.attachment(address)
            peer_port = link.port_of(peer)
            return (peer_port.node, peer_port.port) in vtn.all_ports()
        return False

    def map_endpoint(self, vtn_id: str, address: str,
                     vbridge_id: str = "vb0") -> str:
        """Convenience: map the attachment port of an endpoint node."""
        node = self.graph.node(address)
        if node.kind == "border-gateway":
            ports = sorted(self.graph.ports_of(address))
            vif = self.map_interface(vtn_id, vbridge_id, address, ports[0])
            self.set_gateway(vtn_id, vbridge_id, vif)
            return vif
        link, _local, peer = self.graph.attachment(address)
        peer_port = link.port_of(peer)
        return self.map_interface(
            vtn_id, vbridge_id, peer_port.node, peer_port.port
        )

    # -- connectivity --------------------------------------------------------------

    def request_connectivity(self, vtn_id: str, intent: Intent) -> IntentResult:
        """Embed a tenant flow inside the slice; installed rules carry the
        slice tag so only this slice's traffic matches them."""
        vtn = self.vtn(vtn_id)
        src, dst = intent.endpoints
        for address in (src, dst):
            if not self.endpoint_in_vtn(vtn, address):
                raise UnknownEntityError(
                    f"foreign endpoint {address!r} outside VTN {vtn_id}"
                )
        flow_id = f"{vtn.tenant}:{intent.intent_id}"
        spec = FlowSpec(
            flow_id=flow_id,
            src=src,
            dst=dst,
            arrival=intent.arrival,
            delay_req_s=intent.delay_req_s,
            protection=intent.protection,
            tenant=vtn.tenant,
            flow_class=intent.flow_class,
        )
        embedding = self.engine.embed_flow(spec)
        try:
            self.resources.embed_rules(embedding, self.tag_of(vtn_id), police=True)
        except CapacityError:
            self.engine.release_flow(flow_id)
            raise
        result = IntentResult(
            intent_id=intent.intent_id,
            flow_id=flow_id,
            worst_case_delay_s=embedding.worst_case_delay_s,
            embedding=embedding,
        )
        self.intents[intent.intent_id] = result
        self.store_put(
            f"intent:{intent.intent_id}",
            {"flow_id": flow_id, "bound_s": embedding.worst_case_delay_s},
        )
        return result

    def release_connectivity(self, intent_id: str) -> None:
        result = self.intents.pop(intent_id, None)
        if result is None:
            raise UnknownEntityError(f"unknown intent {intent_id!r}")
        self.resources.remove_rules(result.flow_id)
        self.engine.release_flow(result.flow_id)
        self.store_put(f"intent:{intent_id}", None)
