"""System bring-up: in-band control-plane planning, 1+1 control-flow
embedding and controller replica placement."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

from .errors import AdmissionError, CapacityError, WindctlError
from .netcalc import ArrivalCurve
from .pathing import FlowSpec, PathEmbedding, PathEngine
from .topology import SWITCH_LIKE, NetworkGraph

CONTROL_TENANT = "_control"


@dataclass
class BootstrapPlan:
    seed_controller: str
    seed_switch: str
    adoption_order: list[str]
    controller_placement: list[str]
    control_specs: list[FlowSpec]
    planned_embeddings: list[PathEmbedding] = field(default_factory=list)
    max_control_distance: int = 0


def _switches(graph: NetworkGraph, domain: str) -> list[str]:
    return sorted(
        n.id
        for n in graph.nodes.values()
        if n.kind in SWITCH_LIKE and n.domain == domain
    )


def _hop_distances(graph: NetworkGraph, start: str, domain: str) -> dict[str, int]:
    dist = {start: 0}
    frontier = [start]
    while frontier:
        nxt: list[str] = []
        for node in frontier:
            for link in sorted(graph.links_at(node), key=lambda l: l.id):
                if link.state != "up":
                    continue
                peer = link.other(node).node
                peer_node = graph.node(peer)
                if peer_node.domain != domain or peer_node.kind not in SWITCH_LIKE:
                    continue
                if peer not in dist:
                    dist[peer] = dist[node] + 1
                    nxt.append(peer)
        frontier = nxt
    return dist


def bfs_adoption_order(graph: NetworkGraph, seed_switch: str,
                       domain: str) -> list[str]:
    """Breadth-first switch adoption from the seed attachment, neighbors in
    node-id order."""
    order = [seed_switch]
    seen = {seed_switch}
    frontier = [seed_switch]
    while frontier:
        nxt: list[str] = []
        for node in frontier:
            for link in sorted(graph.links_at(node), key=lambda l: l.id):
                peer = link.other(node).node
                peer_node = graph.node(peer)
                if (
                    peer_node.kind in SWITCH_LIKE
                    and peer_node.domain == domain
                    and peer not in seen
                ):
                    seen.add(peer)
                    order.append(peer)
                    nxt.append(peer)
        frontier = sorted(nxt)
    return order


def place_controllers(graph: NetworkGraph, seed_switch: str, domain: str,
                      replica_count: int) -> tuple[list[str], int]:
    """Exhaustive min-max-hop-distance placement including the seed switch,
    ties by lowest node-id tuple. Returns (placement, max distance)."""
    switches = _switches(graph, domain)
    if replica_count > len(switches):
        replica_count = len(switches)
    dist_from = {s: _hop_distances(graph, s, domain) for s in switches}
    others = [s for s in switches if s != seed_switch]
    best: tuple[int, tuple[str, ...]] | None = None
    for extra in combinations(others, replica_count - 1):
        placement = tuple(sorted((seed_switch,) + extra))
        worst = max(
            min(dist_from[p].get(s, 1 << 30) for p in placement)
            for s in switches
        )
        key = (worst, placement)
        if best is None or key < best:
            best = key
    if best is None:
        return [seed_switch], 0
    return list(best[1]), best[0]


def plan_bootstrap(
    graph: NetworkGraph,
    engine: PathEngine,
    seed_controller: str,
    replica_count: int,
    control_curve: ArrivalCurve,
    control_delay_req_s: float = 0.05,
) -> BootstrapPlan:
    """Pure planning pass: BFS adoption order, replica placement, and a 1+1
    control flow per controller-switch and controller-controller pair.

    Feasibility is proven on a cloned admission state; nothing is reserved.
    """
    if replica_count < 1:
        raise WindctlError("replica_count must be >= 1")
    controller = graph.node(seed_controller)
    domain = controller.domain
    _link, _port, seed_switch = graph.attachment(seed_controller)

    adoption = bfs_adoption_order(graph, seed_switch, domain)
    placement, worst = place_controllers(graph, seed_switch, domain, replica_count)

    endpoints = [seed_controller] + [s for s in placement if s != seed_switch]
    specs: list[FlowSpec] = []
    for endpoint in endpoints:
        for switch in adoption:
            if switch == endpoint:
                continue
            specs.append(
                FlowSpec(
                    flow_id=f"ctl:{endpoint}->{switch}",
                    src=endpoint,
                    dst=switch,
                    arrival=control_curve,
                    delay_req_s=control_delay_req_s,
                    protection="one-plus-one",
                    tenant=CONTROL_TENANT,
                )
            )
    for a, b in combinations(endpoints, 2):
        specs.append(
            FlowSpec(
                flow_id=f"ctl:{a}<->{b}",
                src=a,
                dst=b,
                arrival=control_curve,
                delay_req_s=control_delay_req_s,
                protection="one-plus-one",
                tenant=CONTROL_TENANT,
            )
        )

    twin = engine.clone()
    planned = []
    for spec in specs:
        try:
            planned.append(twin.embed_flow(spec))
        except AdmissionError as e:
            raise AdmissionError(
                f"insufficient capacity for control flows: {e}",
                constraint=e.constraint,
            ) from None

    return BootstrapPlan(
        seed_controller=seed_controller,
        seed_switch=seed_switch,
        adoption_order=adoption,
        controller_placement=placement,
        control_specs=specs,
        planned_embeddings=planned,
        max_control_distance=worst,
    )


def execute_bootstrap(plan: BootstrapPlan, controller) -> None:
    """Apply a plan to a live controller: reserve and install every control
    flow, adopt switches, and record replica placement in the store.

    Atomic: any sub-step failure rolls back already-installed control flows.
    Re-executing a completed plan is a no-op.
    """
    if getattr(controller, "bootstrap_plan", None) is not None:
        if controller.bootstrap_plan.control_specs == plan.control_specs:
            return
        raise WindctlError("controller already bootstrapped with another plan")

    engine = controller.engine
    resources = controller.resources
    installed: list[str] = []
    try:
        for spec in plan.control_specs:
            embedding = engine.embed_flow(spec)
            try:
                resources.embed_rules(embedding, vtn_tag=None)
            except CapacityError:
                engine.release_flow(spec.flow_id)
                raise
            installed.append(spec.flow_id)
    except (AdmissionError, CapacityError):
        for flow_id in installed:
            resources.remove_rules(flow_id)
            engine.release_flow(flow_id)
        raise

    controller.adopted_switches = list(plan.adoption_order)
    controller.bootstrap_plan = plan
    controller.store.put(
        "bootstrap:placement",
        {"replicas": plan.controller_placement,
         "adoption": plan.adoption_order},
    )
