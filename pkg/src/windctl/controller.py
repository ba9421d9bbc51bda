"""The assembled intra-domain controller.

Owns the graph view, replicated store, admission engine, slicing, rules,
chaining and security for one domain. All mutations are serialized through a
single lock (the controller event queue); reads work on snapshots.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

from .cluster import SyncStore
from .errors import ConfigurationError, UnknownEntityError
from .pathing import FlowSpec, PathEngine
from .resources import ResourceLayer
from .security import AccessProfile, Intent, ReferenceMonitor, SecurityManager
from .sfc import SfcManager
from .topology import NetworkGraph
from .vtn import VtnManager


@dataclass
class IntentRecord:
    intent_id: str
    tenant: str
    state: str  # active | declined
    flow_ids: list[str] = field(default_factory=list)
    worst_case_delay_s: float | None = None
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "intent_id": self.intent_id,
            "tenant": self.tenant,
            "state": self.state,
            "flow_ids": list(self.flow_ids),
            "worst_case_delay_s": self.worst_case_delay_s,
            "detail": self.detail,
        }


class Controller:
    def __init__(
        self,
        graph: NetworkGraph,
        domain: str,
        replicas: int = 3,
        store_seed: int = 0,
        clock=None,
    ):
        self.graph = graph
        self.domain = domain
        self.store = SyncStore(n=max(1, replicas), seed=store_seed)
        self.engine = PathEngine(graph, domain)
        self.resources = ResourceLayer(graph, store_put=self._store_put)
        self.sm = SecurityManager(clock)
        self.rfm = ReferenceMonitor(
            self.sm,
            domain_resolver=lambda address: graph.domain_of(address),
            gateway_resolver=self._gateway_for_tenant,
        )
        self.vtn = VtnManager(graph, self.engine, self.resources,
                              store_put=self._store_put)
        self.sfc = SfcManager(graph, self.engine, self.resources,
                              store_put=self._store_put)
        self.intents: dict[str, IntentRecord] = {}
        self.adopted_switches: list[str] = []
        self.bootstrap_plan = None
        self.interdomain_client = None  # set by the deployment when QOR exists
        self.probe_config: tuple[float, float] | None = None
        self.last_trace: list[dict] = []
        self.last_trace_end: float = 0.0
        self._lock = threading.RLock()
        self.mutation_version = 0

    # -- plumbing -----------------------------------------------------------

    def _store_put(self, key: str, value) -> None:
        self.store.put(key, value)

    def mutate(self, fn):
        """Serialize a mutation through the controller event queue."""
        with self._lock:
            self.mutation_version += 1
            return fn()

    def _gateway_for_tenant(self, tenant: str) -> str | None:
        for vtn_id in sorted(self.vtn.vtns):
            vtn = self.vtn.vtns[vtn_id]
            if vtn.tenant == tenant:
                address = self.vtn.gateway_address(vtn_id)
                if address is not None:
                    return address
        return None

    # -- provisioning ----------------------------------------------------------

    def add_tenant(self, tenant: str, password: str,
                   profile: dict | None) -> None:
        self.sm.add_account(tenant, password)
        if profile is not None:
            self.rfm.add_profile(AccessProfile.from_dict(tenant, profile))

    def ensure_vtn(self, tenant: str, service: str | None = None) -> str:
        vtn = self.vtn.vtn_for_tenant(tenant, service)
        if vtn is not None:
            return vtn.vtn_id
        return self.mutate(lambda: self.vtn.create_vtn(tenant, service))

    def _ensure_endpoint(self, vtn_id: str, address: str) -> None:
        vtn = self.vtn.vtn(vtn_id)
        if not self.vtn.endpoint_in_vtn(vtn, address):
            self.vtn.map_endpoint(vtn_id, address)

    def _ensure_gateway(self, vtn_id: str) -> str:
        address = self.vtn.gateway_address(vtn_id)
        if address is not None:
            return address
        gateways = sorted(self.graph.domains[self.domain].border_gateways)
        if not gateways:
            raise ConfigurationError(
                f"domain {self.domain!r} has no border gateway"
            )
        self.vtn.map_endpoint(vtn_id, gateways[0])
        return gateways[0]

    # -- NBI ----------------------------------------------------------------------

    def nbi_authenticate(self, credentials: dict):
        return self.rfm.authenticate(credentials)

    def submit_intent(self, token: str, intent: Intent) -> IntentRecord:
        """Authorize, split and embed an intent; denials never leave partial
        state behind."""
        tenant = self.rfm.authorize_intent(token, intent)

        def work() -> IntentRecord:
            vtn_id = self.ensure_vtn(tenant, intent.service)
            local = [
                e for e in intent.endpoints
                if self.graph.domain_of(e) == self.domain
            ]
            for endpoint in local:
                self._ensure_endpoint(vtn_id, endpoint)
            if len(local) < 2:
                self._ensure_gateway(vtn_id)
            intra, inter = self.rfm.split_request(intent, tenant)

            if inter is None:
                record = self._embed_local(vtn_id, tenant, intra)
            else:
                if self.interdomain_client is None:
                    raise ConfigurationError(
                        "no QoS orchestrator attached for inter-domain intents"
                    )
                record = self.interdomain_client(self, tenant, vtn_id,
                                                 intra, inter)
            self.intents[intent.intent_id] = record
            self.store.put(f"intentrec:{intent.intent_id}", record.to_dict())
            return record

        return self.mutate(work)

    def _embed_local(self, vtn_id: str, tenant: str, intent: Intent) -> IntentRecord:
        chain = self.sfc.chain_for_vtn(vtn_id)
        if chain is not None:
            spec = FlowSpec(
                flow_id=f"{tenant}:{intent.intent_id}",
                src=intent.endpoints[0],
                dst=intent.endpoints[1],
                arrival=intent.arrival,
                delay_req_s=intent.delay_req_s,
                protection=intent.protection,
                tenant=tenant,
                flow_class=intent.flow_class,
            )
            chain_embedding = self.sfc.route_through_chain(
                spec, chain, self.vtn.tag_of(vtn_id)
            )
            return IntentRecord(
                intent_id=intent.intent_id,
                tenant=tenant,
                state="active",
                flow_ids=[spec.flow_id],
                worst_case_delay_s=chain_embedding.worst_case_delay_s,
                detail={
                    "kind": "chain",
                    "segments": [s.flow_id for s in chain_embedding.segments],
                    "links": chain_embedding.all_links,
                    "vtn": vtn_id,
                },
            )
        result = self.vtn.request_connectivity(vtn_id, intent)
        return IntentRecord(
            intent_id=intent.intent_id,
            tenant=tenant,
            state="active",
            flow_ids=[result.flow_id],
            worst_case_delay_s=result.worst_case_delay_s,
            detail={"kind": "intra", "vtn": vtn_id},
        )

    def get_intent(self, intent_id: str) -> IntentRecord:
        record = self.intents.get(intent_id)
        if record is None:
            raise UnknownEntityError(f"unknown intent {intent_id!r}")
        return record

    def get_kpis(self, intent_id: str, window_s: float = 1.0) -> dict:
        record = self.get_intent(intent_id)
        # per-packet trace records carry the flow id, not the intent id
        flow_id = record.flow_ids[0] if record.flow_ids else intent_id
        report = self.resources.monitor_intent(
            self.last_trace, intent_id, window_s, self.last_trace_end,
            record.worst_case_delay_s, probe_flow=flow_id,
        )
        # KPI caches tolerate staleness; they live in the adaptive shard
        self.store.put_kpi(f"kpi:{intent_id}", report.to_dict())
        return report.to_dict()

    def assert_rules_persisted(self) -> None:
        """The persisted rule set must equal the rules installed in switches."""
        installed: dict[str, list[dict]] = {}
        for rule in self.resources.installed_rules():
            installed.setdefault(rule.cookie[0], []).append(rule.to_dict())
        for key in self.store.keys("rules:"):
            flow_id = key[len("rules:"):]
            persisted = self.store.get(key)
            if persisted is None:
                continue
            if sorted(map(str, persisted)) != sorted(
                map(str, installed.get(flow_id, []))
            ):
                raise AssertionError(f"persisted rules diverge for {flow_id}")
            installed.pop(flow_id, None)
        leftovers = {
            fid for fid in installed
            if not fid.startswith(("seg:", "segflow:", "sensorbind:"))
        }
        if leftovers:
            raise AssertionError(f"unpersisted installed rules: {leftovers}")

    def attach_trace(self, trace: list[dict], end_time: float) -> None:
        self.last_trace = trace
        self.last_trace_end = end_time

    # -- NFV / IIoT NBI -----------------------------------------------------------

    def nbi_instantiate_vnf(self, token: str, kind: str,
                            preferred_host: str | None = None) -> dict:
        self.sm.validate_token(token)
        instance = self.mutate(
            lambda: self.sfc.instantiate_vnf(kind, preferred_host)
        )
        return {"vnf_id": instance.vnf_id, "host": instance.host}

    def nbi_create_chain(self, token: str, vnf_ids: list[str]) -> dict:
        self.sm.validate_token(token)
        chain_id = self.mutate(lambda: self.sfc.create_chain(vnf_ids))
        return {"chain_id": chain_id}

    def nbi_map_chain(self, token: str, chain_id: str,
                      service: str | None = None) -> dict:
        tenant = self.sm.validate_token(token)
        vtn_id = self.ensure_vtn(tenant, service)
        self.mutate(lambda: self.sfc.map_vtn_to_chain(vtn_id, chain_id))
        return {"vtn_id": vtn_id, "chain_id": chain_id}

    def nbi_bind_sensor(self, token: str, sensor: str) -> dict:
        tenant = self.sm.validate_token(token)
        vtn_id = self.ensure_vtn(tenant)

        def work():
            binding = self.sfc.bind_sensor(sensor, tenant, vtn_id)
            self._ensure_endpoint(vtn_id, sensor)
            return binding

        binding = self.mutate(work)
        return {
            "sensor": binding.sensor,
            "tenant": binding.tenant,
            "vtn_id": binding.vtn_id,
            "proxy_vnf": binding.proxy_vnf,
        }
