"""Scenario orchestration: build per-domain controllers, bootstrap the
control plane, process tenant intents (including inter-domain stitching via
the orchestrator), assemble the simulation workload, run it, and collect
metrics."""

from __future__ import annotations

from dataclasses import dataclass

from .bootstrap import execute_bootstrap, plan_bootstrap
from .controller import Controller, IntentRecord
from .errors import AdmissionError, WindctlError
from .interdomain import Qon, Qor
from .netcalc import ArrivalCurve
from .pathing import FlowSpec
from .security import Intent
from .sim import Metrics, SimFlow, Simulation
from .topology import (
    SWITCH_LIKE,
    IntentSpec,
    NetworkGraph,
    Workload,
    load_scenario_dict,
)


class CombinedResources:
    """Read-only union of per-domain resource layers for the simulator."""

    def __init__(self, layers):
        self.layers = list(layers)

    @property
    def tables(self) -> dict:
        merged = {}
        for layer in self.layers:
            merged.update(layer.tables)
        return merged

    def meter_by_id(self, meter_id: str):
        for layer in self.layers:
            meter = layer.meter_by_id(meter_id)
            if meter is not None:
                return meter
        return None


@dataclass
class IntentOutcome:
    spec: IntentSpec
    controller: Controller
    record: IntentRecord


@dataclass
class RunResult:
    metrics: Metrics
    trace: list[dict]
    deployment: "Deployment"


class Deployment:
    def __init__(self, graph: NetworkGraph, workload: Workload):
        self.graph = graph
        self.workload = workload
        self.controllers: dict[str, Controller] = {}
        self.qor: Qor | None = None
        self.qons: dict[str, Qon] = {}
        self.outcomes: list[IntentOutcome] = []
        self.interdomain_records: list[dict] = []

    # -- construction -----------------------------------------------------------

    @classmethod
    def build(cls, graph: NetworkGraph, workload: Workload) -> "Deployment":
        self = cls(graph, workload)
        sim = workload.sim
        for idx, domain_id in enumerate(sorted(graph.domains)):
            ctrl = Controller(
                graph, domain_id,
                replicas=sim.replicas,
                store_seed=sim.seed + idx,
            )
            ctrl.probe_config = (sim.probe_rate_hz, sim.probe_bits)
            for tenant in workload.tenants:
                ctrl.add_tenant(tenant.id, tenant.password, tenant.profile)
            self.controllers[domain_id] = ctrl

        for domain_id in sorted(graph.domains):
            self._bootstrap_domain(domain_id)

        if len(graph.domains) > 1:
            self.qor = Qor()
            self.qor.security.add_account("qor-admin", "qor-admin-pass")
            for domain_id in sorted(graph.domains):
                password = f"{domain_id}-qon-secret"
                self.qor.security.add_account(f"qon-{domain_id}", password)
                qon = Qon(self.controllers[domain_id], self.qor, password)
                qon.register()
                if graph.domains[domain_id].kind == "nsp":
                    qon.announce()
                self.qons[domain_id] = qon
            for ctrl in self.controllers.values():
                ctrl.interdomain_client = self._establish_interdomain
        return self

    def _bootstrap_domain(self, domain_id: str) -> None:
        ctrl = self.controllers[domain_id]
        controllers_here = sorted(
            n.id
            for n in self.graph.nodes_in_domain(domain_id)
            if n.kind == "controller"
        )
        if not controllers_here:
            return
        control = self.workload.sim.control
        plan = plan_bootstrap(
            self.graph,
            ctrl.engine,
            controllers_here[0],
            replica_count=self.workload.sim.replicas,
            control_curve=ArrivalCurve(control.rate_bps, control.burst_bits),
            control_delay_req_s=control.delay_req_s,
        )
        execute_bootstrap(plan, ctrl)

    # -- intents ------------------------------------------------------------------

    def process_intents(self) -> list[IntentOutcome]:
        passwords = {t.id: t.password for t in self.workload.tenants}
        for spec in self.workload.intents:
            ctrl = self.controllers[self.graph.domain_of(spec.src)]
            token = ctrl.nbi_authenticate(
                {"username": spec.tenant, "password": passwords[spec.tenant]}
            )
            if spec.chain:
                vtn_id = ctrl.ensure_vtn(spec.tenant, spec.service)
                vnf_ids = [
                    ctrl.sfc.instantiate_vnf(kind).vnf_id for kind in spec.chain
                ]
                chain_id = ctrl.sfc.create_chain(vnf_ids)
                ctrl.sfc.map_vtn_to_chain(vtn_id, chain_id)
            intent = Intent(
                intent_id=spec.id,
                endpoints=(spec.src, spec.dst),
                arrival=ArrivalCurve(spec.rate_bps, spec.burst_bits),
                delay_req_s=spec.delay_req_s,
                protection=spec.protection,
                flow_class=spec.flow_class,
                schedule=spec.schedule,
                service=spec.service,
            )
            record = ctrl.submit_intent(token.value, intent)
            self.outcomes.append(IntentOutcome(spec, ctrl, record))
        return self.outcomes

    # -- inter-domain stitching ------------------------------------------------------

    def _peer_link(self, gateway: str, remote_gateway: str):
        for link in self.graph.links_at(gateway):
            if link.other(gateway).node == remote_gateway:
                return link
        raise WindctlError(
            f"no inter-domain link between {gateway} and {remote_gateway}"
        )

    def _interlink_delay(self, link, gateway: str, packet_bits: float) -> float:
        port = link.port_of(gateway)
        be_rate = self.graph.best_effort_rate(port)
        transmission = packet_bits / be_rate if be_rate > 0 else 0.0
        # unreserved crossing: generous 8x slack on serialization
        return link.propagation_s + 8 * transmission

    def _establish_interdomain(self, src_ctrl: Controller, tenant: str,
                               vtn_id: str, intra: Intent,
                               inter: dict) -> IntentRecord:
        if self.qor is None:
            raise WindctlError("no orchestrator in this deployment")
        dst_ctrl = self.controllers[inter["dst_domain"]]
        dst_vtn = dst_ctrl.ensure_vtn(tenant, intra.service)
        dst_ctrl._ensure_endpoint(dst_vtn, inter["dst_endpoint"])
        dst_gateway = dst_ctrl._ensure_gateway(dst_vtn)
        src_gateway = intra.endpoints[1]
        curve = ArrivalCurve(inter["rate_bps"], inter["burst_bits"])
        req = inter["delay_req_s"]
        e2e = (inter["src_endpoint"], inter["dst_endpoint"])
        intent_id = inter["intent_id"]

        src_spec = FlowSpec(
            flow_id=f"{tenant}:{intent_id}:srcleg",
            src=inter["src_endpoint"], dst=src_gateway,
            arrival=curve, delay_req_s=req, tenant=tenant,
        )
        dst_spec = FlowSpec(
            flow_id=f"{tenant}:{intent_id}:dstleg",
            src=dst_gateway, dst=inter["dst_endpoint"],
            arrival=curve, delay_req_s=req, tenant=tenant,
        )
        est_src = src_ctrl.engine.compute_constrained_path(src_spec)
        est_dst = dst_ctrl.engine.compute_constrained_path(dst_spec)
        if est_src is None or est_dst is None:
            raise AdmissionError(
                f"intra leg infeasible for {intent_id}", constraint="intra-leg"
            )
        budget = req - est_src[2] - est_dst[2] - 0.005 if req else 10.0
        path = self.qor.compute_e2e_path(
            inter["src_domain"], inter["dst_domain"], budget, inter["rate_bps"]
        )
        if path is None:
            raise AdmissionError(
                f"inter-domain part of {intent_id} infeasible at the "
                "orchestrator; request declined",
                constraint="qor:no-feasible-chain",
            )
        self.qor.instantiate_path(path.path_id, e2e)

        src_emb = dst_emb = None
        try:
            first_link = self._peer_link(src_gateway, path.offers[0].ingress)
            last_link = self._peer_link(dst_gateway, path.offers[-1].egress)
            e2e_flow_id = f"{tenant}:{intent_id}"
            src_emb = src_ctrl.engine.embed_flow(src_spec)
            src_ctrl.resources.embed_leg_rules(
                src_emb, src_ctrl.vtn.tag_of(vtn_id), e2e[0], e2e[1],
                exit_port=first_link.port_of(src_gateway).port, police=True,
                proto=e2e_flow_id,
            )
            dst_emb = dst_ctrl.engine.embed_flow(dst_spec)
            dst_ctrl.resources.embed_leg_rules(
                dst_emb, dst_ctrl.vtn.tag_of(dst_vtn), e2e[0], e2e[1],
                entry_in_port=last_link.port_of(dst_gateway).port,
                proto=e2e_flow_id,
            )
        except WindctlError:
            if src_emb is not None:
                src_ctrl.resources.remove_rules(src_spec.flow_id)
                src_ctrl.engine.release_flow(src_spec.flow_id)
            if dst_emb is not None:
                dst_ctrl.engine.release_flow(dst_spec.flow_id)
            self.qor.teardown_path(path.path_id)
            raise

        links_full = list(src_emb.primary) + [first_link.id]
        interlink_delay = self._interlink_delay(
            first_link, src_gateway, curve.burst
        )
        for i, offer in enumerate(path.offers):
            qon = self.qons[offer.domain]
            reservation = qon.reservations[(offer.offer_id, e2e[0], e2e[1])]
            links_full.extend(reservation["embedding"].primary)
            if i + 1 < len(path.offers):
                nxt = path.offers[i + 1]
                mid = self._peer_link(offer.egress, nxt.ingress)
                links_full.append(mid.id)
                interlink_delay += self._interlink_delay(
                    mid, offer.egress, curve.burst
                )
        links_full.append(last_link.id)
        interlink_delay += self._interlink_delay(
            last_link, path.offers[-1].egress, curve.burst
        )
        links_full.extend(dst_emb.primary)

        bound = (
            src_emb.worst_case_delay_s
            + path.total_delay_s
            + dst_emb.worst_case_delay_s
            + interlink_delay
        )
        record = IntentRecord(
            intent_id=intent_id,
            tenant=tenant,
            state="active",
            flow_ids=[src_spec.flow_id, dst_spec.flow_id],
            worst_case_delay_s=bound,
            detail={
                "kind": "inter",
                "path_id": path.path_id,
                "offers": [o.offer_id for o in path.offers],
                "links": links_full,
                "interlink_delay_s": interlink_delay,
                "total_offer_delay_s": path.total_delay_s,
            },
        )
        self.interdomain_records.append(record.to_dict())
        dst_ctrl.intents[intent_id] = record
        return record

    # -- workload assembly --------------------------------------------------------

    def _first_hop(self, embedding) -> tuple[int, int] | None:
        spec = embedding.spec
        if self.graph.node(spec.src).kind in SWITCH_LIKE:
            return None
        link0 = self.graph.link(embedding.primary[0])
        port = link0.port_of(spec.src).port
        queues = embedding.queue_assignment.get("primary", [0])
        return (port, queues[0])

    def build_sim_flows(self) -> list[SimFlow]:
        flows: list[SimFlow] = []
        sim = self.workload.sim
        for outcome in self.outcomes:
            spec, ctrl, record = outcome.spec, outcome.controller, outcome.record
            if record.state != "active":
                continue
            kind = record.detail.get("kind", "intra")
            rate, burst = spec.rate_bps, spec.burst_bits
            if spec.flow_class == "best-effort":
                rate = burst = None
            if kind == "intra":
                embedding = ctrl.engine.embeddings[record.flow_ids[0]]
                paths = [list(embedding.primary)]
                if embedding.backup is not None:
                    paths.append(list(embedding.backup))
                flows.append(
                    SimFlow(
                        flow_id=record.flow_ids[0],
                        src=spec.src, dst=spec.dst, tenant=spec.tenant,
                        packet_bits=spec.packet_bits, period_s=spec.period_s,
                        protection=spec.protection,
                        rate_bps=rate, burst_bits=burst,
                        bound_s=embedding.worst_case_delay_s,
                        paths=paths,
                        first_hop=self._first_hop(embedding),
                        window=spec.schedule,
                    )
                )
            elif kind == "chain":
                segments = [
                    ctrl.engine.embeddings[fid]
                    for fid in record.detail["segments"]
                ]
                bound = None
                if spec.flow_class == "real-time":
                    bound = sum(
                        ctrl.engine.recompute_bound(s) for s in segments
                    )
                flows.append(
                    SimFlow(
                        flow_id=record.flow_ids[0],
                        src=spec.src, dst=spec.dst, tenant=spec.tenant,
                        packet_bits=spec.packet_bits, period_s=spec.period_s,
                        protection="none",
                        rate_bps=rate, burst_bits=burst,
                        bound_s=bound,
                        paths=[record.detail["links"]],
                        first_hop=self._first_hop(segments[0]),
                        window=spec.schedule,
                    )
                )
            else:  # inter-domain
                src_emb = ctrl.engine.embeddings[record.flow_ids[0]]
                flows.append(
                    SimFlow(
                        flow_id=f"{spec.tenant}:{spec.id}",
                        src=spec.src, dst=spec.dst, tenant=spec.tenant,
                        packet_bits=spec.packet_bits, period_s=spec.period_s,
                        protection="none",
                        rate_bps=rate, burst_bits=burst,
                        bound_s=record.worst_case_delay_s,
                        paths=[record.detail["links"]],
                        first_hop=self._first_hop(src_emb),
                        window=spec.schedule,
                    )
                )

        control = sim.control
        for domain_id in sorted(self.controllers):
            ctrl = self.controllers[domain_id]
            if ctrl.bootstrap_plan is None:
                continue
            for cspec in ctrl.bootstrap_plan.control_specs:
                embedding = ctrl.engine.embeddings[cspec.flow_id]
                flows.append(
                    SimFlow(
                        flow_id=cspec.flow_id,
                        src=cspec.src, dst=cspec.dst, tenant="_control",
                        packet_bits=control.packet_bits,
                        period_s=control.period_s,
                        protection="one-plus-one",
                        rate_bps=cspec.arrival.rate,
                        burst_bits=cspec.arrival.burst,
                        bound_s=embedding.worst_case_delay_s,
                        paths=[list(embedding.primary), list(embedding.backup)],
                        first_hop=self._first_hop(embedding),
                        kind="control",
                    )
                )

        for domain_id in sorted(self.qons):
            qon = self.qons[domain_id]
            ctrl = self.controllers[domain_id]
            seen = set()
            for key in sorted(qon.reservations):
                probe_id = qon.reservations[key]["probe"]
                if probe_id is None or probe_id in seen:
                    continue
                seen.add(probe_id)
                embedding = ctrl.engine.embeddings.get(probe_id)
                if embedding is None:
                    continue
                flows.append(
                    SimFlow(
                        flow_id=probe_id,
                        src=embedding.spec.src, dst=embedding.spec.dst,
                        tenant="_transit",
                        packet_bits=sim.probe_bits,
                        period_s=1.0 / sim.probe_rate_hz,
                        protection="none",
                        rate_bps=embedding.spec.arrival.rate,
                        burst_bits=embedding.spec.arrival.burst,
                        bound_s=embedding.worst_case_delay_s,
                        paths=[list(embedding.primary)],
                        first_hop=None,
                        kind="probe",
                    )
                )
        return flows

    # -- execution ---------------------------------------------------------------

    def apply_replica_failures(self) -> None:
        store = None
        for domain_id in sorted(self.graph.domains):
            if self.graph.domains[domain_id].kind == "industrial":
                store = self.controllers[domain_id].store
                break
        if store is None:
            return
        events = sorted(
            (f for f in self.workload.failures if f.event in ("crash", "recover")),
            key=lambda f: f.time_s,
        )
        for ev in events:
            rid = int(ev.target.split(":", 1)[1])
            if rid >= len(store.cluster.replicas):
                continue
            if ev.event == "crash":
                store.cluster.crash(rid)
            else:
                store.cluster.recover(rid)
            store.cluster.run_for(2.0)

    def run(self, capture_trace: bool = True) -> RunResult:
        link_failures = [
            f for f in self.workload.failures if f.event in ("down", "up")
        ]
        pre_states = {lid: l.state for lid, l in self.graph.links.items()}
        sim = Simulation(
            self.graph,
            CombinedResources(
                [c.resources for c in self.controllers.values()]
            ),
            self.build_sim_flows(),
            link_failures,
            duration_s=self.workload.sim.duration_s,
            seed=self.workload.sim.seed,
            detection_timeout_s=self.workload.sim.detection_timeout_s,
            capture_trace=capture_trace,
        )
        metrics = sim.run()
        # the run consumed the failure schedule; put the graph back so the
        # deployment stays reusable (repeated runs, live API queries)
        for lid, state in pre_states.items():
            self.graph.apply_link_event(lid, state)
        self.apply_replica_failures()
        for ctrl in self.controllers.values():
            ctrl.attach_trace(sim.trace, self.workload.sim.duration_s)
        self.last_sim = sim
        return RunResult(metrics=metrics, trace=sim.trace, deployment=self)


def run_scenario(doc: dict, seed: int | None = None,
                 duration_s: float | None = None,
                 capture_trace: bool = True) -> RunResult:
    """bootstrap -> intents -> simulation -> metrics for a scenario dict."""
    doc = dict(doc)
    sim_doc = dict(doc.get("sim", {}))
    if seed is not None:
        sim_doc["seed"] = seed
    if duration_s is not None:
        sim_doc["duration_s"] = duration_s
    doc["sim"] = sim_doc
    graph, workload = load_scenario_dict(doc)
    deployment = Deployment.build(graph, workload)
    deployment.process_intents()
    return deployment.run(capture_trace=capture_trace)
