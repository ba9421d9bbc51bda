import pytest

from windctl.errors import WindctlError
from windctl.runner import run_scenario
from windctl.scenarios import Builder, ring6, random_scenario
from windctl.sim import SimFlow, Simulation, measure_failover
from windctl.topology import load_scenario_dict
from windctl.units import downtime_minutes_per_year


def flow_metrics(result, flow_id):
    return result.metrics.flows[flow_id]


class TestDeterminismAndConservation:
    def test_same_seed_identical_metrics(self):
        a = run_scenario(ring6(seed=7), capture_trace=False)
        b = run_scenario(ring6(seed=7), capture_trace=False)
        assert a.metrics.to_json() == b.metrics.to_json()

    def test_different_seed_differs_somewhere(self):
        a = run_scenario(ring6(seed=1), capture_trace=False)
        b = run_scenario(ring6(seed=2), capture_trace=False)
        assert a.metrics.to_json() != b.metrics.to_json()

    def test_no_failures_no_loss(self):
        result = run_scenario(ring6(seed=3))
        for fm in result.metrics.flows.values():
            assert fm.lost == 0
            assert fm.availability == 1.0

    def test_conservation_identity(self):
        doc = ring6(
            protection="fast-failover",
            failures=[{"time_s": 2.0, "target": "R2", "event": "down"}],
        )
        result = run_scenario(doc)
        for fm in result.metrics.flows.values():
            assert fm.generated == fm.delivered + fm.lost + fm.in_flight

    def test_empty_workload_zero_counts(self):
        b = Builder()
        b.doc["domains"].append({"id": "d", "kind": "industrial"})
        b.node("S1", "switch", "d")
        b.node("S2", "switch", "d")
        b.link("S1", "S2", 1e9, 1e-5)
        b.rt_queues_everywhere()
        b.doc["sim"] = {"seed": 0, "duration_s": 1.0, "replicas": 1}
        result = run_scenario(b.doc)
        assert result.metrics.flows == {}
        assert result.metrics.event_count == 0

    def test_unembedded_flow_rejected(self, ring6_graph):
        graph, _ = ring6_graph
        with pytest.raises(WindctlError, match="unembedded"):
            Simulation(
                graph, None,
                [SimFlow("ghost", "scada", "turb4", "t", 8000, 0.1)],
                [], 1.0, 0,
            )


class TestProtection:
    def test_one_plus_one_zero_loss_under_single_failure(self):
        doc = ring6(
            protection="one-plus-one",
            failures=[{"time_s": 2.0, "target": "R3", "event": "down"}],
        )
        result = run_scenario(doc)
        fm = flow_metrics(result, "opergrid:scada-loop")
        assert fm.lost == 0
        assert fm.failover_gap_s == 0.0

    def test_fast_failover_gap_within_target(self):
        doc = ring6(
            protection="fast-failover",
            failures=[{"time_s": 2.0, "target": "R2", "event": "down"}],
        )
        doc["intents"][0]["period_s"] = 0.01
        doc["intents"][0]["packet_bits"] = 800
        doc["intents"][0]["rate_bps"] = 80_000
        doc["intents"][0]["burst_bits"] = 800
        result = run_scenario(doc)
        fm = flow_metrics(result, "opergrid:scada-loop")
        assert fm.lost > 0  # packets in the detection window are gone
        assert fm.failover_gap_s is not None
        assert fm.failover_gap_s <= 0.05

    def test_failure_off_path_no_gap(self):
        # scada path S1->S2->S3->S4; R5 (S5-S6) is on the backup arc only
        doc = ring6(failures=[{"time_s": 2.0, "target": "R5", "event": "down"}])
        result = run_scenario(doc)
        fm = flow_metrics(result, "opergrid:scada-loop")
        assert fm.lost == 0
        assert fm.failover_gap_s is None


class TestMeasureFailover:
    def test_uninterrupted_flow_scores_zero(self):
        deliveries = [0.1 * i for i in range(1, 50)]
        gap, flagged = measure_failover(deliveries, 2.05, 0.1, 5.0)
        assert gap == pytest.approx(0.0, abs=1e-9)
        assert not flagged

    def test_gap_measures_service_hole(self):
        deliveries = [0.1, 0.2, 0.3, 0.9, 1.0]
        gap, flagged = measure_failover(deliveries, 0.35, 0.1, 5.0)
        assert gap == pytest.approx(0.5)
        assert not flagged

    def test_never_recovers_flagged(self):
        deliveries = [0.1, 0.2]
        gap, flagged = measure_failover(deliveries, 0.25, 0.1, 5.0)
        assert flagged
        assert gap == pytest.approx(5.0 - 0.25)


class TestAvailability:
    def test_no_failures_full_availability(self):
        result = run_scenario(ring6(seed=5))
        assert all(
            fm.availability == 1.0 for fm in result.metrics.flows.values()
        )

    def test_one_second_outage_of_hundred(self):
        b = Builder()
        b.doc["domains"].append({"id": "d", "kind": "industrial"})
        b.node("S1", "switch", "d")
        b.node("S2", "switch", "d")
        b.node("H1", "host", "d")
        b.node("H2", "host", "d")
        b.link("S1", "S2", 1e9, 1e-5, link_id="L")
        b.link("H1", "S1", 1e9, 1e-5)
        b.link("H2", "S2", 1e9, 1e-5)
        b.rt_queues_everywhere()
        b.doc["tenants"] = [{
            "id": "t", "password": "pw",
            "profile": {
                "allowed_endpoint_pairs": [["H1", "H2"]],
                "max_bandwidth_bps": 1e6,
                "min_delay_req_s": 0,
                "allowed_protections": ["none"],
            },
        }]
        b.doc["intents"] = [{
            "id": "f", "tenant": "t", "src": "H1", "dst": "H2",
            "rate_bps": 100_000, "burst_bits": 1000, "delay_req_s": 0.05,
            "class": "real-time", "packet_bits": 1000, "period_s": 0.5,
        }]
        b.doc["failures"] = [
            {"time_s": 50.0, "target": "L", "event": "down"},
            {"time_s": 51.0, "target": "L", "event": "up"},
        ]
        b.doc["sim"] = {"seed": 1, "duration_s": 100.0, "replicas": 1}
        result = run_scenario(b.doc)
        fm = flow_metrics(result, "t:f")
        assert fm.availability == pytest.approx(0.99)

    def test_downtime_conversion_helper(self):
        assert downtime_minutes_per_year(0.9999) == pytest.approx(52.56)
        assert downtime_minutes_per_year(1.0) == 0.0


class TestBoundSoundness:
    @pytest.mark.parametrize("seed", range(5))
    def test_random_scenarios_respect_bounds(self, seed):
        doc = random_scenario(seed + 50, max_switches=8, max_flows=8,
                              duration_s=1.5)
        result = run_scenario(doc, capture_trace=False)
        for fm in result.metrics.flows.values():
            if fm.bound_s is None or fm.max_delay_s is None:
                continue
            assert fm.max_delay_s <= fm.bound_s + 1e-9, fm.flow_id


class TestMeters:
    def test_meter_halves_oversubscribed_flow(self):
        doc = ring6()
        doc["intents"] = [{
            "id": "hog", "tenant": "opergrid", "src": "scada", "dst": "turb4",
            "rate_bps": 2_000_000, "burst_bits": 2_000, "delay_req_s": 0.05,
            "class": "real-time", "packet_bits": 2_000, "period_s": 0.001,
        }]
        doc["sim"]["duration_s"] = 4.0
        from windctl.runner import Deployment
        from windctl.topology import load_scenario_dict
        graph, workload = load_scenario_dict(doc)
        dep = Deployment.build(graph, workload)
        dep.process_intents()
        ctrl = dep.controllers["park"]
        meter = ctrl.resources.meter_by_id("meter:opergrid:hog")
        assert meter is not None
        meter.rate_bps = 1_000_000  # police at half the offered load
        meter.burst_bits = 4_000
        result = dep.run(capture_trace=False)
        fm = flow_metrics(result, "opergrid:hog")
        ratio = fm.delivered / fm.generated
        assert ratio == pytest.approx(0.5, abs=0.05)

    def test_conformant_flow_sees_no_meter_drops(self):
        result = run_scenario(ring6(seed=11))
        fm = flow_metrics(result, "opergrid:scada-loop")
        assert fm.lost == 0


class TestSchedulesAndChains:
    def test_schedule_gates_traffic_to_window(self):
        doc = ring6()
        doc["intents"][0]["schedule"] = {"start_s": 2.0, "end_s": 4.0}
        result = run_scenario(doc)
        deliveries = [
            r["t"] for r in result.trace
            if r["kind"] == "deliver" and r["flow"] == "opergrid:scada-loop"
        ]
        assert deliveries
        assert min(deliveries) >= 2.0
        assert max(deliveries) <= 4.0 + 0.05

    def test_chain_order_preserved_for_every_packet(self):
        b = Builder()
        b.doc["domains"].append({"id": "d", "kind": "industrial"})
        for i in range(1, 5):
            b.node(f"S{i}", "switch", "d")
        b.node("MC1", "micro-cloud", "d", slots=2)
        b.node("MC2", "micro-cloud", "d", slots=2)
        b.node("H1", "host", "d")
        b.node("H2", "host", "d")
        for i in range(1, 5):
            b.link(f"S{i}", f"S{i % 4 + 1}", 1e9, 1e-5)
        b.link("MC1", "S2", 1e9, 1e-5)
        b.link("MC2", "S3", 1e9, 1e-5)
        b.link("H1", "S1", 1e9, 1e-5)
        b.link("H2", "S4", 1e9, 1e-5)
        b.rt_queues_everywhere()
        b.doc["tenants"] = [{
            "id": "t", "password": "pw",
            "profile": {
                "allowed_endpoint_pairs": [["H1", "H2"]],
                "max_bandwidth_bps": 5e6,
                "min_delay_req_s": 0,
                "allowed_protections": ["none"],
            },
        }]
        b.doc["intents"] = [{
            "id": "f", "tenant": "t", "src": "H1", "dst": "H2",
            "rate_bps": 200_000, "burst_bits": 2000, "delay_req_s": 0.1,
            "class": "real-time", "packet_bits": 2000, "period_s": 0.01,
            "chain": ["firewall", "ids"],
        }]
        b.doc["sim"] = {"seed": 2, "duration_s": 2.0, "replicas": 1}
        result = run_scenario(b.doc)
        fm = flow_metrics(result, "t:f")
        assert fm.lost == 0
        assert fm.delivered + fm.in_flight == fm.generated
        sim = result.deployment.last_sim
        delivered_seqs = sim.delivered["t:f"]
        visits = {
            k: v for k, v in sim.chain_visits.items()
            if k[0] == "t:f" and k[1] in delivered_seqs
        }
        assert len(visits) == fm.delivered
        expected = next(iter(visits.values()))
        assert len(expected) == 2
        assert all(v == expected for v in visits.values())
