import random

import pytest

from windctl.errors import ReserveFailedError, UnknownEntityError
from windctl.interdomain import MonitoringReport, PathSegmentOffer, Qor
from windctl.oracles import enumerate_offer_chains
from windctl.runner import Deployment
from windctl.scenarios import interdomain
from windctl.topology import load_scenario_dict

NOW = 1000.0


def bare_qor() -> tuple[Qor, str]:
    qor = Qor(clock=lambda: NOW)
    qor.security.add_account("admin", "pw")
    token = qor.security.authenticate({"username": "admin", "password": "pw"})
    return qor, token.value


def descriptor(domain, kind, gateways, peers):
    return {
        "domain": domain,
        "kind": kind,
        "gateways": gateways,
        "peerings": [
            {"gateway": g, "remote_domain": d, "remote_gateway": rg}
            for (g, d, rg) in peers
        ],
    }


def offer(domain, ingress, egress, delay, bw, cost=1.0, valid=NOW + 100):
    return PathSegmentOffer(
        offer_id=f"{domain}:{ingress}->{egress}",
        domain=domain,
        ingress=ingress,
        egress=egress,
        delay_s=delay,
        bandwidth_bps=bw,
        cost=cost,
        valid_until=valid,
    ).to_dict()


def serial_qor():
    """A - N1 - N2 - B chain, offers 10ms/100Mbps and 15ms/50Mbps."""
    qor, token = bare_qor()
    qor.register_domain(
        descriptor("A", "industrial", ["GA"], [("GA", "N1", "N1A")]), token
    )
    qor.register_domain(
        descriptor("N1", "nsp", ["N1A", "N1B"],
                   [("N1A", "A", "GA"), ("N1B", "N2", "N2A")]), token
    )
    qor.register_domain(
        descriptor("N2", "nsp", ["N2A", "N2B"],
                   [("N2A", "N1", "N1B"), ("N2B", "B", "GB")]), token
    )
    qor.register_domain(
        descriptor("B", "industrial", ["GB"], [("GB", "N2", "N2B")]), token
    )
    qor.announce_offers("N1", [offer("N1", "N1A", "N1B", 0.010, 100e6)], token)
    qor.announce_offers("N2", [offer("N2", "N2A", "N2B", 0.015, 50e6)], token)
    return qor, token


class TestRegistration:
    def test_first_registration_new_id(self):
        qor, token = bare_qor()
        reg = qor.register_domain(
            descriptor("A", "industrial", ["GA"], []), token
        )
        assert reg.startswith("reg-")

    def test_repeat_registration_idempotent(self):
        qor, token = bare_qor()
        d = descriptor("A", "industrial", ["GA"], [])
        assert qor.register_domain(d, token) == qor.register_domain(d, token)

    def test_bad_credentials(self):
        qor, _ = bare_qor()
        with pytest.raises(Exception):
            qor.security.authenticate({"username": "admin", "password": "x"})
        from windctl.errors import TokenInvalidError
        with pytest.raises(TokenInvalidError):
            qor.register_domain(descriptor("A", "industrial", [], []), "bogus")


class TestAnnouncements:
    def test_two_border_pairs_two_offers(self):
        graph, workload = load_scenario_dict(interdomain())
        dep = Deployment.build(graph, workload)
        assert len(dep.qor.offers["nsp1"]) == 2  # both directions

    def test_reannounce_replaces(self):
        qor, token = serial_qor()
        qor.announce_offers(
            "N1", [offer("N1", "N1B", "N1A", 0.02, 10e6)], token
        )
        assert len(qor.offers["N1"]) == 1
        assert qor.offers["N1"][0].ingress == "N1B"

    def test_expired_offers_excluded(self):
        qor, token = serial_qor()
        qor.announce_offers(
            "N1", [offer("N1", "N1A", "N1B", 0.01, 100e6, valid=NOW - 1)], token
        )
        assert qor.offers["N1"] == []
        assert qor.compute_e2e_path("A", "B", 0.030, 50e6) is None

    def test_unregistered_domain_rejected(self):
        qor, token = bare_qor()
        with pytest.raises(UnknownEntityError):
            qor.announce_offers("ghost", [], token)


class TestComputation:
    def test_serial_chain_adds_delay_min_bandwidth(self):
        qor, _ = serial_qor()
        path = qor.compute_e2e_path("A", "B", 0.030, 50e6)
        assert path is not None
        assert path.total_delay_s == pytest.approx(0.025)
        assert path.bottleneck_bps == 50e6
        assert [o.domain for o in path.offers] == ["N1", "N2"]

    def test_budget_too_tight_returns_none(self):
        qor, _ = serial_qor()
        assert qor.compute_e2e_path("A", "B", 0.020, 50e6) is None

    def test_bandwidth_filter(self):
        qor, _ = serial_qor()
        assert qor.compute_e2e_path("A", "B", 0.030, 60e6) is None

    @pytest.mark.parametrize("seed", range(10))
    def test_random_segment_graphs_match_exhaustive(self, seed):
        qor, token, adjacency, src, dst = random_segment_world(seed)
        rng = random.Random(seed + 999)
        for _ in range(4):
            budget = rng.choice([0.005, 0.02, 0.05, 0.2])
            need = rng.choice([10e6, 50e6, 200e6])
            got = qor.compute_e2e_path(src, dst, budget, need)
            oracle = enumerate_offer_chains(
                {d: list(v) for d, v in qor.offers.items()},
                adjacency, src, dst, budget, need, qor.clock(),
            )
            if oracle is None:
                assert got is None
            else:
                assert got is not None
                cost = sum(o.cost for o in got.offers)
                assert cost == pytest.approx(oracle[0])
                assert got.total_delay_s <= budget + 1e-12


def random_segment_world(seed):
    from windctl.scenarios import random_segment_world as make_world

    descriptors, offers, adjacency, src, dst = make_world(seed)
    qor, token = bare_qor()
    qor.clock = lambda: 0.0
    for desc in descriptors:
        qor.register_domain(desc, token)
    for domain, items in offers.items():
        qor.announce_offers(domain, items, token)
    return qor, token, adjacency, src, dst


class FakeQon:
    def __init__(self, fail_on: set[str] | None = None):
        self.fail_on = fail_on or set()
        self.reserved: list[str] = []
        self.released: list[str] = []

    def reserve(self, request):
        if request["offer_id"] in self.fail_on:
            return {"ok": False, "reason": "injected"}
        self.reserved.append(request["offer_id"])
        return {"ok": True}

    def release(self, request):
        self.released.append(request["offer_id"])
        return {"ok": True}


class TestInstantiation:
    def _three_domain(self):
        qor, token = bare_qor()
        qor.register_domain(
            descriptor("A", "industrial", ["GA"], [("GA", "N1", "N1A")]), token
        )
        chain = []
        for i in (1, 2, 3):
            nxt = "B" if i == 3 else f"N{i + 1}"
            nxt_gw = "GB" if i == 3 else f"N{i + 1}A"
            prev = "A" if i == 1 else f"N{i - 1}"
            prev_gw = "GA" if i == 1 else f"N{i - 1}B"
            qor.register_domain(
                descriptor(
                    f"N{i}", "nsp", [f"N{i}A", f"N{i}B"],
                    [(f"N{i}A", prev, prev_gw), (f"N{i}B", nxt, nxt_gw)],
                ),
                token,
            )
            qor.announce_offers(
                f"N{i}", [offer(f"N{i}", f"N{i}A", f"N{i}B", 0.01, 100e6)],
                token,
            )
            chain.append(f"N{i}:N{i}A->N{i}B")
        qor.register_domain(
            descriptor("B", "industrial", ["GB"], [("GB", "N3", "N3B")]), token
        )
        return qor, token, chain

    def test_happy_path_all_domains_accept(self):
        qor, token, chain = self._three_domain()
        qons = {f"N{i}": FakeQon() for i in (1, 2, 3)}
        for d, q in qons.items():
            qor.attach_qon(d, q)
        path = qor.compute_e2e_path("A", "B", 0.05, 50e6)
        out = qor.instantiate_path(path.path_id, ("h1", "h2"))
        assert out.state == "active"
        assert all(q.reserved for q in qons.values())

    @pytest.mark.parametrize("fail_at", [0, 1, 2])
    def test_reserve_failure_anywhere_releases_everything(self, fail_at):
        qor, token, chain = self._three_domain()
        qons = {}
        for i, domain in enumerate(("N1", "N2", "N3")):
            qons[domain] = FakeQon(
                fail_on={chain[i]} if i == fail_at else set()
            )
            qor.attach_qon(domain, qons[domain])
        path = qor.compute_e2e_path("A", "B", 0.05, 50e6)
        with pytest.raises(ReserveFailedError) as exc:
            qor.instantiate_path(path.path_id, ("h1", "h2"))
        assert exc.value.domain == f"N{fail_at + 1}"
        assert path.state == "computed"
        for i, domain in enumerate(("N1", "N2", "N3")):
            q = qons[domain]
            if i < fail_at:
                assert q.reserved == [chain[i]]
                assert q.released == [chain[i]]
            else:
                assert q.released == []

    def test_expired_offer_fails_reserve_and_refreshes(self):
        qor, token, chain = self._three_domain()
        for i in (1, 2, 3):
            qor.attach_qon(f"N{i}", FakeQon())
        path = qor.compute_e2e_path("A", "B", 0.05, 50e6)
        # N2's offer expires between compute and instantiate
        qor.offers["N2"][0].valid_until = NOW - 1
        with pytest.raises(ReserveFailedError) as exc:
            qor.instantiate_path(path.path_id)
        assert exc.value.reason == "offer expired"
        assert qor.offers["N2"] == []  # registry refreshed


class TestMonitoring:
    def test_segment_unavailable_flags_dependent_path(self):
        qor, token, chain = self._setup_active()
        report = MonitoringReport(
            domain="N2", offer_id=chain[1], window_s=1.0,
            measured_delay_s=None, delivered_ratio=0.0,
            alarms=["segment-unavailable"],
        ).to_dict()
        qor.report_monitoring("N2", report, token)
        path = next(iter(qor.paths.values()))
        assert path.flagged

    def test_healthy_report_changes_nothing(self):
        qor, token, chain = self._setup_active()
        before = {o.offer_id: o.valid_until
                  for os_ in qor.offers.values() for o in os_}
        report = MonitoringReport(
            domain="N1", offer_id=chain[0], window_s=1.0,
            measured_delay_s=0.001, delivered_ratio=1.0,
        ).to_dict()
        qor.report_monitoring("N1", report, token)
        path = next(iter(qor.paths.values()))
        assert not path.flagged
        after = {o.offer_id: o.valid_until
                 for os_ in qor.offers.values() for o in os_}
        assert before == after
        assert qor.recent_monitoring()[-1]["offer_id"] == chain[0]

    def test_qos_threat_annotates_offer(self):
        qor, token, chain = self._setup_active()
        report = MonitoringReport(
            domain="N1", offer_id=chain[0], window_s=1.0,
            measured_delay_s=0.5, delivered_ratio=1.0,
            alarms=["qos-threat"],
        ).to_dict()
        qor.report_monitoring("N1", report, token)
        o = qor.offers["N1"][0]
        assert o.valid_until <= NOW + 30.0

    def test_unknown_offer_rejected(self):
        qor, token, chain = self._setup_active()
        report = MonitoringReport(
            domain="N1", offer_id="nope", window_s=1.0,
            measured_delay_s=None, delivered_ratio=1.0,
        ).to_dict()
        with pytest.raises(UnknownEntityError):
            qor.report_monitoring("N1", report, token)

    def _setup_active(self):
        inst = TestInstantiation()
        qor, token, chain = inst._three_domain()
        for i in (1, 2, 3):
            qor.attach_qon(f"N{i}", FakeQon())
        path = qor.compute_e2e_path("A", "B", 0.05, 50e6)
        qor.instantiate_path(path.path_id)
        return qor, token, chain


class TestEndToEnd:
    def test_full_stack_interdomain_flow(self):
        graph, workload = load_scenario_dict(interdomain())
        dep = Deployment.build(graph, workload)
        dep.process_intents()
        result = dep.run()
        fm = result.metrics.flows["opergrid:remote-scada"]
        assert fm.lost == 0
        assert fm.delivered == fm.generated - fm.in_flight
        assert fm.max_delay_s <= fm.bound_s + 1e-9
        assert fm.max_delay_s <= 0.05  # the intent's requirement
        # the cheaper transit (nsp1) carries the flow
        rec = dep.interdomain_records[0]
        assert rec["detail"]["offers"] == ["nsp1:N1A->N1B"]
        # transit labels were popped before delivery
        assert all(
            r["residual_labels"] == 0
            for r in result.trace
            if r["kind"] == "deliver"
        )

    def test_information_hiding_on_all_messages(self):
        import json
        graph, workload = load_scenario_dict(interdomain())
        dep = Deployment.build(graph, workload)
        dep.process_intents()
        result = dep.run()
        for domain, qon in dep.qons.items():
            qon.publish_monitoring(result.trace, window_s=5.0, now=5.0)
        internal_nodes = {
            n.id for n in graph.nodes.values()
            if n.kind in ("switch", "host", "controller", "micro-cloud")
        }
        for msg in dep.qor.message_log:
            blob = json.dumps(msg)
            for node in internal_nodes:
                # endpoint host names appear only as flow endpoints in
                # reserve messages, which the endpoint domains supplied
                if node in ("scada", "turb"):
                    continue
                assert f'"{node}"' not in blob, (node, msg["op"])
