"""Intra-domain path management.

Delay-constrained least-cost routing (label setting with dominance pruning,
exact at desk scale), maximally link-disjoint path pairs (successive
shortest-path min-cost flow with second-use penalty arcs) and flow
admission/release against the network-calculus queue loads.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, replace

from .errors import AdmissionError, UnknownEntityError, WindctlError
from .netcalc import ArrivalCurve, QueueLoad, ServiceCurve
from .topology import BEST_EFFORT_QUEUE, Link, NetworkGraph, PortRef

HOP_COST = 1


@dataclass(frozen=True)
class FlowSpec:
    flow_id: str
    src: str
    dst: str
    arrival: ArrivalCurve
    delay_req_s: float | None
    protection: str = "none"
    tenant: str = ""
    flow_class: str = "real-time"

    def validate(self) -> None:
        if self.flow_class == "real-time":
            if self.delay_req_s is None or self.delay_req_s <= 0:
                raise WindctlError(
                    f"flow {self.flow_id!r}: real-time flows need delay_req_s > 0"
                )
        elif self.delay_req_s is not None:
            raise WindctlError(
                f"flow {self.flow_id!r}: best-effort flows take no delay requirement"
            )


@dataclass
class PathEmbedding:
    flow_id: str
    spec: FlowSpec
    primary: list[str]  # ordered link ids src -> dst
    backup: list[str] | None
    queue_assignment: dict[str, list[int]]
    worst_case_delay_s: float | None
    reserved_rate_bps: float

    def paths(self) -> list[tuple[int, list[str]]]:
        out = [(0, self.primary)]
        if self.backup is not None:
            out.append((1, self.backup))
        return out


def path_nodes(graph: NetworkGraph, src: str, links: list[str]) -> list[str]:
    """Node sequence of a link path starting at src."""
    nodes = [src]
    for lid in links:
        nodes.append(graph.link(lid).other(nodes[-1]).node)
    return nodes


class PathEngine:
    """Routing plus the authoritative queue-reservation ledger of one domain."""

    def __init__(self, graph: NetworkGraph, domain: str | None = None,
                 node_disjoint: bool = False):
        self.graph = graph
        self.domain = domain
        self.node_disjoint = node_disjoint
        self.loads: dict[tuple[str, int, int], QueueLoad] = {}
        self.embeddings: dict[str, PathEmbedding] = {}

    def clone(self) -> "PathEngine":
        """What-if copy sharing the graph but not the reservation state."""
        twin = PathEngine(self.graph, self.domain, self.node_disjoint)
        for key, load in self.loads.items():
            twin.loads[key] = QueueLoad(load.service, dict(load.flows), key)
        twin.embeddings = {
            fid: replace(e, queue_assignment=dict(e.queue_assignment))
            for fid, e in self.embeddings.items()
        }
        return twin

    # -- queue state -------------------------------------------------------

    def _load(self, port: PortRef, queue_id: int) -> QueueLoad:
        key = (port.node, port.port, queue_id)
        if key not in self.loads:
            q = self.graph.real_time_queue(port)
            if q is None or q.queue_id != queue_id:
                raise UnknownEntityError(f"no declared queue {queue_id} at {port}")
            self.loads[key] = QueueLoad(
                ServiceCurve(q.rate_bps, q.latency_s), {}, key
            )
        return self.loads[key]

    def residual_rate(self, port: PortRef, queue_id: int) -> float:
        key = (port.node, port.port, queue_id)
        if key in self.loads:
            return self.loads[key].residual_rate()
        q = self.graph.real_time_queue(port)
        if q is not None and q.queue_id == queue_id:
            return q.rate_bps
        raise UnknownEntityError(f"no declared queue {queue_id} at {port}")

    # -- edge evaluation ---------------------------------------------------

    def _in_domain(self, node_id: str) -> bool:
        return self.domain is None or self.graph.node(node_id).domain == self.domain

    def _edges_from(self, node_id: str):
        """Usable directed edges: (link, egress port, peer node id), lex order."""
        out = []
        for link in self.graph.links_at(node_id):
            if link.state != "up":
                continue
            peer = link.other(node_id).node
            if not self._in_domain(peer):
                continue
            out.append((link, link.port_of(node_id), peer))
        out.sort(key=lambda e: (e[2], e[0].id))
        return out

    def _hop_eval(self, link: Link, egress: PortRef, spec: FlowSpec):
        """(queue_id, delay_contribution) or None when the hop cannot carry spec."""
        if spec.flow_class == "best-effort":
            return BEST_EFFORT_QUEUE, 0.0
        q = self.graph.real_time_queue(egress)
        if q is None:
            return None
        key = (egress.node, egress.port, q.queue_id)
        load = self.loads.get(key)
        agg_r = load.aggregate().rate if load else 0.0
        agg_b = load.aggregate().burst if load else 0.0
        if agg_r + spec.arrival.rate > q.rate_bps:
            return None
        delay = q.latency_s + (agg_b + spec.arrival.burst) / q.rate_bps
        return q.queue_id, delay + link.propagation_s

    # -- constrained least-cost search --------------------------------------

    def compute_constrained_path(
        self, spec: FlowSpec
    ) -> tuple[list[str], list[int], float | None] | None:
        """Minimal-cost path satisfying the delay requirement with spec added.

        Returns (link ids, queue assignment, worst-case bound) or None when
        infeasible. Ties broken by lowest lexicographic node-id sequence.
        """
        self._check_endpoints(spec.src, spec.dst)
        budget = spec.delay_req_s if spec.flow_class == "real-time" else None

        best_cost = self._label_setting_cost(spec, budget)
        if best_cost is None:
            return None
        path = self._lex_min_path(spec, budget, best_cost)
        if path is None:  # pragma: no cover - phase 1 guarantees existence
            return None
        queues, bound = self._path_metrics(spec, path)
        return path, queues, bound

    def _check_endpoints(self, src: str, dst: str) -> None:
        a, b = self.graph.node(src), self.graph.node(dst)
        if src == dst:
            raise WindctlError("src and dst must differ")
        if a.domain != b.domain:
            raise WindctlError(
                f"endpoints {src!r} and {dst!r} are in different domains"
            )

    def _label_setting_cost(self, spec: FlowSpec, budget: float | None):
        """Phase 1: minimum feasible cost via (cost, delay) labels."""
        labels: dict[str, list[tuple[int, float]]] = {spec.src: [(0, 0.0)]}
        heap: list[tuple[int, float, str]] = [(0, 0.0, spec.src)]
        best: int | None = None
        while heap:
            cost, delay, node = heapq.heappop(heap)
            if best is not None and cost > best:
                break
            if any(
                (c < cost and d <= delay) or (c <= cost and d < delay)
                for c, d in labels.get(node, [])
                if (c, d) != (cost, delay)
            ):
                continue
            if node == spec.dst:
                best = cost if best is None else min(best, cost)
                continue
            for link, egress, peer in self._edges_from(node):
                hop = self._hop_eval(link, egress, spec)
                if hop is None:
                    continue
                nd = delay + hop[1]
                if budget is not None and nd > budget + 1e-15:
                    continue
                nc = cost + HOP_COST
                bucket = labels.setdefault(peer, [])
                if any(c <= nc and d <= nd for c, d in bucket):
                    continue
                bucket[:] = [(c, d) for c, d in bucket if not (nc <= c and nd <= d)]
                bucket.append((nc, nd))
                heapq.heappush(heap, (nc, nd, peer))
        return best

    def _lex_min_path(self, spec: FlowSpec, budget: float | None, target_cost: int):
        """Phase 2: lexicographically smallest node sequence at minimal cost."""
        min_cost_to = self._reverse_bound(spec, spec.dst, kind="cost")
        min_delay_to = self._reverse_bound(spec, spec.dst, kind="delay")

        path: list[str] = []
        visited = {spec.src}

        def dfs(node: str, cost: int, delay: float) -> bool:
            if node == spec.dst:
                return cost == target_cost
            for link, egress, peer in self._edges_from(node):
                if peer in visited:
                    continue
                hop = self._hop_eval(link, egress, spec)
                if hop is None:
                    continue
                nc, nd = cost + HOP_COST, delay + hop[1]
                if peer not in min_cost_to:
                    continue
                if nc + min_cost_to[peer] > target_cost:
                    continue
                if budget is not None and nd + min_delay_to[peer] > budget + 1e-15:
                    continue
                visited.add(peer)
                path.append(link.id)
                if dfs(peer, nc, nd):
                    return True
                path.pop()
                visited.discard(peer)
            return False

        if dfs(spec.src, 0, 0.0):
            return list(path)
        return None

    def _reverse_bound(self, spec: FlowSpec, dst: str, kind: str) -> dict[str, float]:
        """Lower bounds to dst over usable directed edges (Dijkstra, reversed)."""
        # Directed edge u->v costs depend on u's egress queue; reversing means
        # relaxing v from u using the forward weight.
        dist: dict[str, float] = {dst: 0.0}
        heap: list[tuple[float, str]] = [(0.0, dst)]
        # Precompute forward weights once.
        weights: dict[tuple[str, str, str], float] = {}
        nodes = [n for n in self.graph.nodes if self._in_domain(n)]
        for u in nodes:
            for link, egress, peer in self._edges_from(u):
                hop = self._hop_eval(link, egress, spec)
                if hop is None:
                    continue
                w = HOP_COST if kind == "cost" else hop[1]
                weights[(u, peer, link.id)] = w
        incoming: dict[str, list[tuple[str, float]]] = {}
        for (u, v, _lid), w in weights.items():
            incoming.setdefault(v, []).append((u, w))
        while heap:
            d, v = heapq.heappop(heap)
            if d > dist.get(v, float("inf")):
                continue
            for u, w in incoming.get(v, []):
                nd = d + w
                if nd < dist.get(u, float("inf")):
                    dist[u] = nd
                    heapq.heappush(heap, (nd, u))
        return dist

    def _path_metrics(self, spec: FlowSpec, links: list[str]):
        """Queue ids per hop and the bound with spec provisionally included."""
        queues: list[int] = []
        total = 0.0
        node = spec.src
        for lid in links:
            link = self.graph.link(lid)
            egress = link.port_of(node)
            hop = self._hop_eval(link, egress, spec)
            if hop is None:
                raise AdmissionError(
                    f"hop at {egress} cannot carry flow {spec.flow_id!r}",
                    constraint=f"capacity@{egress}",
                )
            queues.append(hop[0])
            total += hop[1]
            node = link.other(node).node
        bound = total if spec.flow_class == "real-time" else None
        return queues, bound

    # -- disjoint pairs ------------------------------------------------------

    def compute_disjoint_pair(
        self, src: str, dst: str
    ) -> tuple[list[str], list[str], int]:
        """Two maximally link-disjoint paths minimizing (shared, total cost).

        Sharing a link costs M = sum of all link costs + 1, so the objective
        is lexicographic; fully disjoint pairs come out with shared = 0.
        """
        self._check_endpoints(src, dst)
        links = [
            l
            for l in self.graph.links.values()
            if l.state == "up"
            and self._in_domain(l.a.node)
            and self._in_domain(l.b.node)
        ]
        penalty = HOP_COST * len(links) + 1
        node_penalty = penalty * (len(links) + 2)

        arcs: list[dict] = []  # {u, v, cap, cost, flow, link}
        index: dict[str, list[int]] = {}

        def add_arc(u: str, v: str, cost: float, link: str | None):
            arcs.append({"u": u, "v": v, "cap": 1, "cost": cost, "flow": 0,
                         "link": link})
            rev = {"u": v, "v": u, "cap": 0, "cost": -cost, "flow": 0,
                   "link": link, "rev": len(arcs) - 1}
            arcs[-1]["rev"] = len(arcs)
            arcs.append(rev)
            index.setdefault(u, []).append(len(arcs) - 2)
            index.setdefault(v, []).append(len(arcs) - 1)

        def node_in(n: str) -> str:
            return f"{n}#in" if self.node_disjoint and n not in (src, dst) else n

        def node_out(n: str) -> str:
            return f"{n}#out" if self.node_disjoint and n not in (src, dst) else n

        if self.node_disjoint:
            for n in self.graph.nodes:
                if n in (src, dst) or not self._in_domain(n):
                    continue
                add_arc(node_in(n), node_out(n), 0.0, None)
                add_arc(node_in(n), node_out(n), node_penalty, None)

        for link in links:
            for u, v in ((link.a.node, link.b.node), (link.b.node, link.a.node)):
                add_arc(node_out(u), node_in(v), HOP_COST, link.id)
                add_arc(node_out(u), node_in(v), HOP_COST + penalty, link.id)

        potential: dict[str, float] = {}

        def dijkstra() -> tuple[dict[str, float], dict[str, int]] | None:
            dist: dict[str, float] = {src: 0.0}
            prev: dict[str, int] = {}
            heap: list[tuple[float, str]] = [(0.0, src)]
            while heap:
                d, u = heapq.heappop(heap)
                if d > dist.get(u, float("inf")):
                    continue
                for ai in index.get(u, []):
                    arc = arcs[ai]
                    if arc["cap"] - arc["flow"] <= 0:
                        continue
                    rc = arc["cost"] + potential.get(u, 0.0) - potential.get(
                        arc["v"], 0.0
                    )
                    nd = d + rc
                    if nd < dist.get(arc["v"], float("inf")) - 1e-12:
                        dist[arc["v"]] = nd
                        prev[arc["v"]] = ai
                        heapq.heappush(heap, (nd, arc["v"]))
            if dst not in dist:
                return None
            return dist, prev

        for _unit in range(2):
            result = dijkstra()
            if result is None:
                raise UnknownEntityError(f"dst {dst!r} unreachable from {src!r}")
            dist, prev = result
            for n, d in dist.items():
                potential[n] = potential.get(n, 0.0) + d
            v = dst
            while v != src:
                ai = prev[v]
                arcs[ai]["flow"] += 1
                arcs[arcs[ai]["rev"]]["flow"] -= 1
                v = arcs[ai]["u"]

        # Decompose the 2-unit flow into two paths, lex-smallest walk first.
        out_flow: dict[str, list[tuple[str, str | None, int]]] = {}
        for ai, arc in enumerate(arcs):
            for _ in range(max(0, arc["flow"])):
                out_flow.setdefault(arc["u"], []).append((arc["v"], arc["link"], ai))

        def strip(n: str) -> str:
            return n.split("#", 1)[0]

        paths: list[list[str]] = []
        for _ in range(2):
            node, walk = src, []
            while node != dst:
                nxt = min(out_flow[node], key=lambda e: (strip(e[0]), e[1] or ""))
                out_flow[node].remove(nxt)
                if nxt[1] is not None:
                    walk.append(nxt[1])
                node = nxt[0]
            paths.append(walk)

        paths.sort(key=lambda p: path_nodes(self.graph, src, p))
        shared = len(set(paths[0]) & set(paths[1]))
        return paths[0], paths[1], shared

    # -- admission -----------------------------------------------------------

    def embed_flow(self, spec: FlowSpec) -> PathEmbedding:
        """Admit spec, reserving queue capacity on every path it uses.

        Raises AdmissionError naming the binding constraint; on rejection the
        reservation state is unchanged.
        """
        spec.validate()
        if spec.flow_id in self.embeddings:
            raise WindctlError(f"flow {spec.flow_id!r} already embedded")

        if spec.protection == "none":
            found = self.compute_constrained_path(spec)
            if found is None:
                raise AdmissionError(
                    f"no feasible path for flow {spec.flow_id!r}",
                    constraint=self._diagnose(spec),
                )
            links, queues, bound = found
            embedding = PathEmbedding(
                flow_id=spec.flow_id,
                spec=spec,
                primary=links,
                backup=None,
                queue_assignment={"primary": queues},
                worst_case_delay_s=bound,
                reserved_rate_bps=spec.arrival.rate
                if spec.flow_class == "real-time"
                else 0.0,
            )
            self._commit(embedding)
            return embedding

        path_a, path_b, _shared = self.compute_disjoint_pair(spec.src, spec.dst)
        embedding = PathEmbedding(
            flow_id=spec.flow_id,
            spec=spec,
            primary=path_a,
            backup=path_b,
            queue_assignment={},
            worst_case_delay_s=None,
            reserved_rate_bps=2 * spec.arrival.rate
            if spec.protection == "one-plus-one"
            else spec.arrival.rate,
        )
        self._commit(embedding)
        return embedding

    def _diagnose(self, spec: FlowSpec) -> str:
        """Name the binding constraint for an infeasible request."""
        relaxed = replace(spec, delay_req_s=None, flow_class="best-effort")
        try:
            unconstrained = self.compute_constrained_path(relaxed)
        except WindctlError:
            unconstrained = None
        if unconstrained is None:
            return "connectivity"
        no_delay = self._label_setting_cost(spec, budget=None)
        return "capacity" if no_delay is None else "delay"

    def _commit(self, embedding: PathEmbedding) -> None:
        spec = embedding.spec
        added: list[tuple[tuple[str, int, int], tuple[str, int]]] = []
        names = {0: "primary", 1: "backup"}

        def rollback():
            for key, fid in added:
                self.loads[key].remove(fid)

        try:
            bounds = []
            for copy, links in embedding.paths():
                queues: list[int] = []
                total = 0.0
                node = spec.src
                for lid in links:
                    link = self.graph.link(lid)
                    egress = link.port_of(node)
                    node = link.other(node).node
                    if spec.flow_class == "best-effort":
                        queues.append(BEST_EFFORT_QUEUE)
                        continue
                    q = self.graph.real_time_queue(egress)
                    if q is None:
                        raise AdmissionError(
                            f"no real-time queue at {egress} for flow "
                            f"{spec.flow_id!r}",
                            constraint=f"capacity@{egress}",
                        )
                    load = self._load(egress, q.queue_id)
                    if load.residual_rate() < spec.arrival.rate:
                        raise AdmissionError(
                            f"queue {egress}/{q.queue_id} lacks "
                            f"{spec.arrival.rate} bps for flow {spec.flow_id!r}",
                            constraint=f"capacity@{egress}",
                        )
                    fid = (spec.flow_id, copy)
                    load.add(fid, spec.arrival)
                    added.append(((egress.node, egress.port, q.queue_id), fid))
                    queues.append(q.queue_id)
                embedding.queue_assignment[names[copy]] = queues
                if spec.flow_class == "real-time":
                    total = self._bound_for_path(spec, links)
                    if total > spec.delay_req_s + 1e-15:
                        raise AdmissionError(
                            f"{names[copy]} path bound {total:.6g}s exceeds "
                            f"requirement {spec.delay_req_s:.6g}s for flow "
                            f"{spec.flow_id!r}",
                            constraint=f"delay@{names[copy]}",
                        )
                    bounds.append(total)

            if spec.flow_class == "real-time":
                embedding.worst_case_delay_s = max(bounds)
                touched = {key for key, _ in added}
                for other in self.embeddings.values():
                    if other.spec.flow_class != "real-time":
                        continue
                    if not self._crosses(other, touched):
                        continue
                    new_bound = self.recompute_bound(other)
                    if new_bound > other.spec.delay_req_s + 1e-15:
                        raise AdmissionError(
                            f"admitting {spec.flow_id!r} would push flow "
                            f"{other.flow_id!r} past its delay requirement",
                            constraint=f"delay:{other.flow_id}",
                        )
        except AdmissionError:
            rollback()
            raise

        self.embeddings[embedding.flow_id] = embedding
        self._refresh_bounds()

    def release_flow(self, flow_id: str) -> None:
        if flow_id not in self.embeddings:
            raise UnknownEntityError(f"unknown flow {flow_id!r}")
        for load in self.loads.values():
            for fid in [f for f in load.flows if f[0] == flow_id]:
                load.remove(fid)
        del self.embeddings[flow_id]
        self._refresh_bounds()

    def _crosses(self, embedding: PathEmbedding, keys: set) -> bool:
        names = {0: "primary", 1: "backup"}
        for copy, links in embedding.paths():
            qids = embedding.queue_assignment.get(names[copy], [])
            node = embedding.spec.src
            for lid, qid in zip(links, qids):
                link = self.graph.link(lid)
                egress = link.port_of(node)
                node = link.other(node).node
                if (egress.node, egress.port, qid) in keys:
                    return True
        return False

    def _bound_for_path(self, spec: FlowSpec, links: list[str]) -> float:
        """Bound from current loads; spec must already be reserved on the path."""
        total = 0.0
        node = spec.src
        for lid in links:
            link = self.graph.link(lid)
            egress = link.port_of(node)
            node = link.other(node).node
            q = self.graph.real_time_queue(egress)
            load = self._load(egress, q.queue_id)
            total += load.delay_bound() + link.propagation_s
        return total

    def recompute_bound(self, embedding: PathEmbedding) -> float:
        return max(
            self._bound_for_path(embedding.spec, links)
            for _copy, links in embedding.paths()
        )

    def _refresh_bounds(self) -> None:
        """Keep every stored worst-case bound consistent with current loads."""
        for e in self.embeddings.values():
            if e.spec.flow_class == "real-time":
                e.worst_case_delay_s = self.recompute_bound(e)

    def assert_never_oversubscribed(self) -> None:
        for key, load in self.loads.items():
            if load.residual_rate() < -1e-9:
                raise AssertionError(f"queue {key} oversubscribed")
