"""Seeded discrete-event packet simulator.

Packets traverse installed flow rules only. Real-time queues serve FIFO at
their configured rate after their configured latency, with a per-flow
token-bucket reshaper in front of every real-time queue so that each flow
re-enters every hop inside its declared envelope (reshaping does not add to
the worst-case bound; it is what keeps the per-hop bound sum sound).
Best-effort traffic shares the leftover port rate without shaping or
guarantees. Links apply propagation delay; packets in flight on a failing
link are lost. Identical (scenario, seed) runs produce identical metrics.
"""

from __future__ import annotations

import heapq
import itertools
import json
import random
import time
from dataclasses import dataclass, field

from .errors import WindctlError
from .resources import LOCAL_PORT, ResourceLayer
from .topology import (
    BEST_EFFORT_QUEUE,
    SWITCH_LIKE,
    FailureEvent,
    NetworkGraph,
    PortRef,
)

EPS = 1e-9


@dataclass
class SimFlow:
    """Runtime description of one traffic source over an embedded flow."""

    flow_id: str
    src: str
    dst: str
    tenant: str
    packet_bits: float
    period_s: float
    protection: str = "none"
    rate_bps: float | None = None  # declared envelope; None for best-effort
    burst_bits: float | None = None
    bound_s: float | None = None
    paths: list[list[str]] = field(default_factory=list)  # link-id lists
    first_hop: tuple[int, int] | None = None  # (out port, queue) at endpoint src
    window: tuple[float, float] | None = None
    kind: str = "data"  # data | control | probe


@dataclass
class FlowMetrics:
    flow_id: str
    generated: int = 0
    delivered: int = 0
    lost: int = 0
    in_flight: int = 0
    max_delay_s: float | None = None
    mean_delay_s: float | None = None
    bound_s: float | None = None
    failover_gap_s: float | None = None
    availability: float = 1.0

    def to_dict(self) -> dict:
        return {
            "flow_id": self.flow_id,
            "generated": self.generated,
            "delivered": self.delivered,
            "lost": self.lost,
            "in_flight": self.in_flight,
            "max_delay_s": self.max_delay_s,
            "mean_delay_s": self.mean_delay_s,
            "bound_s": self.bound_s,
            "failover_gap_s": self.failover_gap_s,
            "availability": self.availability,
        }


@dataclass
class Metrics:
    flows: dict[str, FlowMetrics]
    event_count: int
    duration_s: float
    seed: int
    cross_tenant_deliveries: int
    wall_time_s: float = 0.0  # reported on console, never serialized

    def to_dict(self) -> dict:
        return {
            "duration_s": self.duration_s,
            "seed": self.seed,
            "event_count": self.event_count,
            "cross_tenant_deliveries": self.cross_tenant_deliveries,
            "flows": {
                fid: self.flows[fid].to_dict() for fid in sorted(self.flows)
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


class _Shaper:
    """Greedy packet token bucket; releases a packet once conformant."""

    __slots__ = ("rate", "burst", "tokens", "last")

    def __init__(self, rate: float, burst: float):
        self.rate = rate
        self.burst = burst
        self.tokens = burst
        self.last = 0.0

    def release_time(self, t: float, bits: float) -> float:
        t = max(t, self.last)
        self.tokens = min(self.burst, self.tokens + self.rate * (t - self.last))
        if self.tokens + EPS * max(bits, 1.0) >= bits:
            self.tokens -= bits
            self.last = t
            return t
        wait = (bits - self.tokens) / self.rate
        self.tokens = 0.0
        self.last = t + wait
        return t + wait


class _MeterState:
    __slots__ = ("rate", "burst", "tokens", "last")

    def __init__(self, rate: float, burst: float):
        self.rate = rate
        self.burst = burst
        self.tokens = burst
        self.last = 0.0

    def allow(self, t: float, bits: float) -> bool:
        self.tokens = min(self.burst, self.tokens + self.rate * (t - self.last))
        self.last = t
        if self.tokens + EPS * max(bits, 1.0) >= bits:
            self.tokens -= bits
            return True
        return False


class _Packet:
    __slots__ = ("flow", "seq", "copy", "bits", "created", "src", "dst",
                 "tag", "labels", "proto")

    def __init__(self, flow, seq, bits, created, src, dst):
        self.flow = flow
        self.seq = seq
        self.copy = "-"
        self.bits = bits
        self.created = created
        self.src = src
        self.dst = dst
        self.tag = None
        self.labels: list[int] = []
        self.proto = flow  # transport-level flow identity (5-tuple stand-in)

    def header(self) -> dict:
        return {
            "src": self.src,
            "dst": self.dst,
            "tag": self.tag,
            "label": self.labels[-1] if self.labels else None,
            "proto": self.proto,
        }

    def clone(self) -> "_Packet":
        twin = _Packet(self.flow, self.seq, self.bits, self.created,
                       self.src, self.dst)
        twin.tag = self.tag
        twin.labels = list(self.labels)
        twin.proto = self.proto
        return twin


class Simulation:
    def __init__(
        self,
        graph: NetworkGraph,
        resources: ResourceLayer,
        flows: list[SimFlow],
        failures: list[FailureEvent],
        duration_s: float,
        seed: int,
        detection_timeout_s: float = 0.01,
        capture_trace: bool = True,
    ):
        self.graph = graph
        self.resources = resources
        for f in flows:
            if not f.paths:
                raise WindctlError(f"unembedded flow {f.flow_id!r} in workload")
        self.flows = {f.flow_id: f for f in flows}
        self.failures = failures
        self.duration = duration_s
        self.seed = seed
        self.detection = detection_timeout_s
        self.capture_trace = capture_trace
        self.rng = random.Random(seed)
        self.now = 0.0
        self._heap: list = []
        self._seq = itertools.count()
        self.event_count = 0
        self.trace: list[dict] = []

        self._shapers: dict[tuple, _Shaper] = {}
        self._busy: dict[tuple, float] = {}
        self._meters: dict[str, _MeterState] = {}
        self._pending_arrivals: dict[str, dict[int, tuple]] = {}
        self._arrival_tokens = itertools.count()
        self._canceled: set[int] = set()
        self._parked = 0

        self.delivered: dict[str, set[int]] = {f: set() for f in self.flows}
        self.outstanding: dict[tuple[str, int], int] = {}
        self.lost: dict[str, int] = {f: 0 for f in self.flows}
        self.delays: dict[str, list[float]] = {f: [] for f in self.flows}
        self.deliveries: dict[str, list[float]] = {f: [] for f in self.flows}
        self.generated: dict[str, int] = {f: 0 for f in self.flows}
        self.active_path: dict[str, int] = {f: 0 for f in self.flows}
        self.activation_log: dict[str, list[tuple[float, int]]] = {
            f: [] for f in self.flows
        }
        self.cross_tenant = 0
        self.chain_visits: dict[tuple[str, int], list[str]] = {}
        self.link_timeline: list[tuple[float, str, str]] = []

    # -- infrastructure ------------------------------------------------------

    def _schedule(self, t: float, fn) -> None:
        heapq.heappush(self._heap, (t, next(self._seq), fn))

    def _trace(self, **record) -> None:
        if self.capture_trace:
            self.trace.append(record)

    # -- sources ----------------------------------------------------------------

    def _emit_all(self) -> None:
        for fid in sorted(self.flows):
            flow = self.flows[fid]
            start, end = flow.window or (0.0, self.duration)
            end = min(end, self.duration)
            offset = self.rng.uniform(0, flow.period_s)
            i = 0
            while True:
                t = start + offset + i * flow.period_s
                if t >= end:
                    break
                self._schedule(t, lambda f=flow, s=i, at=t: self._emit(f, s, at))
                i += 1

    def _emit(self, flow: SimFlow, seq: int, t: float) -> None:
        pkt = _Packet(flow.flow_id, seq, flow.packet_bits, t, flow.src, flow.dst)
        self.generated[flow.flow_id] += 1
        self.outstanding[(flow.flow_id, seq)] = 1
        self._trace(t=t, kind="send", flow=flow.flow_id, seq=seq, node=flow.src)
        src_kind = self.graph.node(flow.src).kind
        if src_kind in SWITCH_LIKE:
            self._process_at(pkt, flow.src, None, t)
        else:
            if flow.first_hop is None:
                self._drop(pkt, flow.src, t, "no-attachment")
                return
            out_port, queue = flow.first_hop
            self._enqueue(pkt, flow.src, out_port, queue, t)

    # -- forwarding ----------------------------------------------------------------

    def _process_at(self, pkt: _Packet, node: str, in_port: int | None,
                    t: float) -> None:
        kind = self.graph.node(node).kind
        if kind not in SWITCH_LIKE:
            self._deliver_at_endpoint(pkt, node, t)
            return
        table = self.resources.tables.get(node)
        rule = table.lookup(pkt.header(), in_port) if table else None
        if rule is None:
            self._drop(pkt, node, t, "no-rule")
            return
        if rule.vnf is not None:
            self.chain_visits.setdefault((pkt.flow, pkt.seq), []).append(rule.vnf)
            self._trace(t=t, kind="vnf", flow=pkt.flow, seq=pkt.seq,
                        node=node, vnf=rule.vnf)
        out_port = None
        queue = BEST_EFFORT_QUEUE
        for action in rule.actions:
            op = action[0]
            if op == "push_tag":
                pkt.tag = action[1]
            elif op == "pop_tag":
                pkt.tag = None
            elif op == "push_label":
                pkt.labels.append(action[1])
            elif op == "pop_label":
                if pkt.labels:
                    pkt.labels.pop()
            elif op == "set_queue":
                queue = action[1]
            elif op == "meter":
                meter = self._meter(action[1])
                if meter is not None and not meter.allow(t, pkt.bits):
                    self._drop(pkt, node, t, "meter")
                    return
            elif op == "duplicate":
                self._duplicate(pkt, node, action[1], t)
                return
            elif op == "failover":
                branch = (
                    action[1]["primary"]
                    if self.active_path.get(pkt.flow, 0) == 0
                    else action[1]["backup"]
                )
                pkt.copy = "A" if self.active_path.get(pkt.flow, 0) == 0 else "B"
                pkt.labels.append(branch["label"])
                self._enqueue(pkt, node, branch["port"],
                              branch.get("queue", BEST_EFFORT_QUEUE), t)
                return
            elif op == "output":
                out_port = action[1]
        if out_port is None:
            self._drop(pkt, node, t, "no-output")
            return
        if out_port == LOCAL_PORT:
            self._deliver_at_endpoint(pkt, node, t)
            return
        self._enqueue(pkt, node, out_port, queue, t)

    def _meter(self, meter_id: str) -> _MeterState | None:
        state = self._meters.get(meter_id)
        if state is None:
            meter = self.resources.meter_by_id(meter_id)
            if meter is None:
                return None
            state = _MeterState(meter.rate_bps, meter.burst_bits)
            self._meters[meter_id] = state
        return state

    def _duplicate(self, pkt: _Packet, node: str, branches: list[dict],
                   t: float) -> None:
        self.outstanding[(pkt.flow, pkt.seq)] += len(branches) - 1
        for idx, branch in enumerate(branches):
            copy = pkt.clone()
            copy.copy = "A" if idx == 0 else "B"
            copy.labels.append(branch["label"])
            self._enqueue(copy, node, branch["port"],
                          branch.get("queue", BEST_EFFORT_QUEUE), t)

    def _enqueue(self, pkt: _Packet, node: str, port: int, queue_id: int,
                 t: float) -> None:
        portref = PortRef(node, port)
        try:
            link = self.graph.link_at_port(portref)
        except WindctlError:
            self._drop(pkt, node, t, "no-link")
            return
        if queue_id == BEST_EFFORT_QUEUE:
            rate = self.graph.best_effort_rate(portref)
            latency = 0.0
        else:
            q = self.graph.real_time_queue(portref)
            if q is None or q.queue_id != queue_id:
                self._drop(pkt, node, t, "no-queue")
                return
            rate, latency = q.rate_bps, q.latency_s
        if rate <= 0:
            self._parked += 1  # starved best-effort queue; packet never serves
            return
        flow = self.flows.get(pkt.flow)
        ready = t
        if (
            queue_id != BEST_EFFORT_QUEUE
            and flow is not None
            and flow.rate_bps is not None
        ):
            key = (node, port, queue_id, pkt.flow, pkt.copy)
            shaper = self._shapers.get(key)
            if shaper is None:
                shaper = _Shaper(flow.rate_bps, flow.burst_bits or pkt.bits)
                self._shapers[key] = shaper
            ready = shaper.release_time(t, pkt.bits)
        busy_key = (node, port, queue_id)
        if ready > t:
            # the reshaper holds the packet; it joins the FIFO only once
            # conformant, so other flows are never head-of-line blocked
            self._schedule(
                ready,
                lambda: self._serve(pkt, busy_key, rate, latency, link, node,
                                    ready),
            )
        else:
            self._serve(pkt, busy_key, rate, latency, link, node, t)

    def _serve(self, pkt: _Packet, busy_key: tuple, rate: float,
               latency: float, link, node: str, t: float) -> None:
        start = max(self._busy.get(busy_key, 0.0), t)
        finish = start + pkt.bits / rate
        self._busy[busy_key] = finish
        depart = finish + latency
        self._schedule(depart, lambda: self._transmit(pkt, link, node, depart))

    def _transmit(self, pkt: _Packet, link, node: str, t: float) -> None:
        if link.state != "up":
            self._drop(pkt, node, t, "link-down")
            return
        peer = link.other(node)
        arrive = t + link.propagation_s
        token = next(self._arrival_tokens)
        self._pending_arrivals.setdefault(link.id, {})[token] = (pkt, t)

        def arrival() -> None:
            self._pending_arrivals.get(link.id, {}).pop(token, None)
            if token in self._canceled:
                self._canceled.discard(token)
                return
            self._process_at(pkt, peer.node, peer.port, arrive)

        self._schedule(arrive, arrival)

    def _deliver_at_endpoint(self, pkt: _Packet, node: str, t: float) -> None:
        if node != pkt.dst:
            self.cross_tenant += 1
            self._trace(t=t, kind="misdelivery", flow=pkt.flow, seq=pkt.seq,
                        node=node)
            self._consume(pkt)
            return
        flow = self.flows.get(pkt.flow)
        endpoint_tenant = flow.tenant if flow else None
        if pkt.flow in self.delivered and pkt.seq in self.delivered[pkt.flow]:
            self._trace(t=t, kind="dup-discard", flow=pkt.flow, seq=pkt.seq,
                        node=node)
            self._consume(pkt)
            return
        self.delivered[pkt.flow].add(pkt.seq)
        delay = t - pkt.created
        self.delays[pkt.flow].append(delay)
        self.deliveries[pkt.flow].append(t)
        self._trace(t=t, kind="deliver", flow=pkt.flow, seq=pkt.seq, node=node,
                    copy=pkt.copy, delay_s=delay, tenant=endpoint_tenant,
                    residual_labels=len(pkt.labels))
        self._consume(pkt)

    def _consume(self, pkt: _Packet) -> None:
        self.outstanding[(pkt.flow, pkt.seq)] -= 1

    def _drop(self, pkt: _Packet, node: str, t: float, reason: str) -> None:
        self._trace(t=t, kind="drop", flow=pkt.flow, seq=pkt.seq, node=node,
                    copy=pkt.copy, reason=reason)
        self.outstanding[(pkt.flow, pkt.seq)] -= 1
        if (
            self.outstanding[(pkt.flow, pkt.seq)] == 0
            and pkt.seq not in self.delivered.get(pkt.flow, set())
        ):
            self.lost[pkt.flow] += 1

    # -- failures ------------------------------------------------------------------

    def _schedule_failures(self) -> None:
        for ev in self.failures:
            if ev.event in ("down", "up"):
                self._schedule(
                    ev.time_s, lambda e=ev: self._link_event(e.target, e.event,
                                                             e.time_s)
                )

    def _link_event(self, link_id: str, state: str, t: float) -> None:
        changed = self.graph.apply_link_event(link_id, state)
        if not changed:
            return
        self.link_timeline.append((t, link_id, state))
        self._trace(t=t, kind="link", link=link_id, state=state)
        if state == "down":
            for token, (pkt, _sent) in list(
                self._pending_arrivals.get(link_id, {}).items()
            ):
                self._canceled.add(token)
                self._pending_arrivals[link_id].pop(token, None)
                self._drop(pkt, f"link:{link_id}", t, "link-down")
            for fid in sorted(self.flows):
                flow = self.flows[fid]
                if flow.protection != "fast-failover" or len(flow.paths) < 2:
                    continue
                active = self.active_path[fid]
                if link_id in flow.paths[active]:
                    self._schedule(
                        t + self.detection, lambda f=fid: self._activate_backup(f)
                    )

    def _activate_backup(self, flow_id: str) -> None:
        flow = self.flows[flow_id]
        active = self.active_path[flow_id]
        other = 1 - active
        if not self._path_up(flow.paths[active]) and self._path_up(
            flow.paths[other]
        ):
            self.active_path[flow_id] = other
            self.activation_log[flow_id].append((self.now, other))
            self._trace(t=self.now, kind="failover", flow=flow_id,
                        to="backup" if other == 1 else "primary")

    def _path_up(self, links: list[str]) -> bool:
        return all(self.graph.links[lid].state == "up" for lid in links)

    # -- run ------------------------------------------------------------------------

    def run(self) -> Metrics:
        wall_start = time.monotonic()
        self._emit_all()
        self._schedule_failures()
        while self._heap:
            t, _n, fn = heapq.heappop(self._heap)
            if t > self.duration:
                break
            self.now = t
            self.event_count += 1
            fn()
        wall = time.monotonic() - wall_start

        flows_out: dict[str, FlowMetrics] = {}
        for fid in sorted(self.flows):
            flow = self.flows[fid]
            delays = self.delays[fid]
            in_flight = sum(
                1
                for (f, seq), n in self.outstanding.items()
                if f == fid and n > 0 and seq not in self.delivered[fid]
            )
            fm = FlowMetrics(
                flow_id=fid,
                generated=self.generated[fid],
                delivered=len(self.delivered[fid]),
                lost=self.lost[fid],
                in_flight=in_flight,
                max_delay_s=max(delays) if delays else None,
                mean_delay_s=sum(delays) / len(delays) if delays else None,
                bound_s=flow.bound_s,
                availability=self._availability(flow),
            )
            gap = self._failover_gap(flow)
            fm.failover_gap_s = gap
            flows_out[fid] = fm
        return Metrics(
            flows=flows_out,
            event_count=self.event_count,
            duration_s=self.duration,
            seed=self.seed,
            cross_tenant_deliveries=self.cross_tenant,
            wall_time_s=wall,
        )

    # -- derived metrics ---------------------------------------------------------

    def _path_set_at(self, flow: SimFlow, t: float) -> list[list[str]]:
        if not flow.paths:
            return []
        if flow.protection == "one-plus-one" and len(flow.paths) > 1:
            return flow.paths
        if flow.protection == "fast-failover" and len(flow.paths) > 1:
            active = 0
            for at, idx in self.activation_log[flow.flow_id]:
                if at <= t:
                    active = idx
            return [flow.paths[active]]
        return [flow.paths[0]]

    def _availability(self, flow: SimFlow) -> float:
        """Fraction of the run during which the flow's current path set had
        connectivity."""
        if not flow.paths:
            return 1.0
        times = sorted(
            {0.0, self.duration}
            | {t for t, _l, _s in self.link_timeline}
            | {t for t, _i in self.activation_log[flow.flow_id]}
        )
        state: dict[str, str] = {lid: "up" for lid in self.graph.links}
        timeline = sorted(self.link_timeline)
        up_time = 0.0
        for lo, hi in zip(times, times[1:]):
            for t, lid, s in timeline:
                if t <= lo:
                    state[lid] = s
            paths = self._path_set_at(flow, lo)
            connected = any(
                all(state[lid] == "up" for lid in path) for path in paths
            )
            if connected:
                up_time += hi - lo
        return up_time / self.duration if self.duration > 0 else 1.0

    def _failover_gap(self, flow: SimFlow) -> float | None:
        affected_times = [
            t
            for t, lid, s in self.link_timeline
            if s == "down" and any(lid in path for path in flow.paths)
        ]
        if not affected_times:
            return None
        gaps = [
            measure_failover(
                self.deliveries[flow.flow_id], ft, flow.period_s, self.duration
            )[0]
            for ft in affected_times
        ]
        return max(gaps)


def measure_failover(
    deliveries: list[float],
    failure_time: float,
    period_s: float,
    duration_s: float,
) -> tuple[float, bool]:
    """Service gap around a failure: first delivery after minus last delivery
    before, minus one nominal period; an uninterrupted flow scores 0. A flow
    that never recovers reports the remainder of the run, flagged."""
    before = [t for t in deliveries if t <= failure_time]
    after = [t for t in deliveries if t > failure_time]
    if not before:
        before = [failure_time]
    if not after:
        return duration_s - failure_time, True
    gap = after[0] - before[-1] - period_s
    # sub-nanosecond residue is float noise, not a service interruption
    return (gap if gap > 1e-9 else 0.0), False
