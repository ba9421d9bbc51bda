"""Independent brute-force oracles.

Everything here certifies an engine result by exhaustive enumeration and is
deliberately kept free of the search machinery it checks. Exponential in the
worst case; intended for graphs of at most a dozen nodes.
"""

from __future__ import annotations

from .netcalc import ArrivalCurve
from .pathing import FlowSpec, PathEngine, path_nodes
from .topology import NetworkGraph


def all_simple_paths(
    graph: NetworkGraph, src: str, dst: str, domain: str | None = None
) -> list[list[str]]:
    """Every simple path src -> dst as an ordered link-id list."""
    paths: list[list[str]] = []
    walk: list[str] = []
    visited = {src}

    def usable(node: str) -> bool:
        return domain is None or graph.node(node).domain == domain

    def dfs(node: str) -> None:
        if node == dst:
            paths.append(list(walk))
            return
        for link in sorted(graph.links_at(node), key=lambda l: l.id):
            if link.state != "up":
                continue
            peer = link.other(node).node
            if peer in visited or not usable(peer):
                continue
            visited.add(peer)
            walk.append(link.id)
            dfs(peer)
            walk.pop()
            visited.discard(peer)

    dfs(src)
    return paths


def path_feasible(engine: PathEngine, spec: FlowSpec, links: list[str]):
    """(capacity ok, delay bound) for spec on the given path, term by term."""
    node = spec.src
    total = 0.0
    for lid in links:
        link = engine.graph.link(lid)
        egress = link.port_of(node)
        node = link.other(node).node
        if spec.flow_class == "best-effort":
            total += link.propagation_s
            continue
        q = engine.graph.real_time_queue(egress)
        if q is None:
            return False, None
        key = (egress.node, egress.port, q.queue_id)
        load = engine.loads.get(key)
        agg_r = sum(c.rate for c in load.flows.values()) if load else 0.0
        agg_b = sum(c.burst for c in load.flows.values()) if load else 0.0
        if agg_r + spec.arrival.rate > q.rate_bps:
            return False, None
        total += q.latency_s + (agg_b + spec.arrival.burst) / q.rate_bps
        total += link.propagation_s
    return True, total


def brute_force_constrained_path(engine: PathEngine, spec: FlowSpec):
    """(cost, node sequence, bound) of the optimal feasible path, or None."""
    domain = engine.graph.node(spec.src).domain
    best = None
    for links in all_simple_paths(engine.graph, spec.src, spec.dst, domain):
        ok, bound = path_feasible(engine, spec, links)
        if not ok:
            continue
        if spec.flow_class == "real-time" and bound > spec.delay_req_s + 1e-15:
            continue
        candidate = (len(links), path_nodes(engine.graph, spec.src, links), bound)
        if best is None or candidate[:2] < best[:2]:
            best = candidate
    return best


def brute_force_disjoint_pair(
    graph: NetworkGraph, src: str, dst: str, domain: str | None = None
):
    """Minimal (shared link count, total cost) over all simple path pairs."""
    paths = all_simple_paths(graph, src, dst, domain)
    best: tuple[int, int] | None = None
    for a in paths:
        for b in paths:
            shared = len(set(a) & set(b))
            objective = (shared, len(a) + len(b))
            if best is None or objective < best:
                best = objective
    return best


def make_flow(flow_id: str, src: str, dst: str, rate: float, burst: float,
              delay_req: float, protection: str = "none") -> FlowSpec:
    return FlowSpec(
        flow_id=flow_id,
        src=src,
        dst=dst,
        arrival=ArrivalCurve(rate, burst),
        delay_req_s=delay_req,
        protection=protection,
    )


def enumerate_offer_chains(
    offers_by_domain: dict[str, list],
    adjacency: dict[tuple[str, str], list[tuple[str, str]]],
    src_domain: str,
    dst_domain: str,
    delay_budget_s: float,
    bandwidth_bps: float,
    now: float,
):
    """Exhaustive enumeration of feasible offer chains; returns the best
    (total cost, total delay, offer-id tuple) or None.

    adjacency maps (domain, egress device) -> [(next domain, ingress device)].
    """
    best = None
    usable: list = []
    for offers in offers_by_domain.values():
        for o in offers:
            if o.valid_until >= now and o.bandwidth_bps >= bandwidth_bps:
                usable.append(o)

    def chains_from(domain: str, device: str, seen: frozenset, acc: list,
                    delay: float, cost: float) -> None:
        nonlocal best
        if delay > delay_budget_s + 1e-15:
            return
        for nxt_domain, nxt_dev in adjacency.get((domain, device), []):
            if nxt_domain == dst_domain:
                if acc:
                    candidate = (cost, delay, tuple(o.offer_id for o in acc))
                    if best is None or candidate < best:
                        best = candidate
                continue
            if nxt_domain in seen:
                continue
            for o in usable:
                if o.domain != nxt_domain or o.ingress != nxt_dev:
                    continue
                nd = delay + o.delay_s
                if nd > delay_budget_s + 1e-15:
                    continue
                chains_from(
                    nxt_domain,
                    o.egress,
                    seen | {nxt_domain},
                    acc + [o],
                    nd,
                    cost + o.cost,
                )

    # Start from every border device of the source domain.
    for (domain, device) in adjacency:
        if domain == src_domain:
            chains_from(domain, device, frozenset({src_domain}), [], 0.0, 0.0)
    return best
