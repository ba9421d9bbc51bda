import json

import pytest

from windctl.errors import ScenarioError, UnknownEntityError
from windctl.scenarios import Builder, ring6
from windctl.topology import load_scenario, load_scenario_dict


def bare_ring6() -> dict:
    b = Builder()
    b.doc["domains"].append({"id": "park", "kind": "industrial"})
    for i in range(1, 7):
        b.node(f"S{i}", "switch", "park")
    for i in range(1, 7):
        b.link(f"S{i}", f"S{i % 6 + 1}", 1e9, 0.00005)
    return b.doc


def test_ring6_fixture_echoes_input():
    graph, workload = load_scenario(json.dumps(bare_ring6()))
    switches = [n for n in graph.nodes.values() if n.kind == "switch"]
    assert len(switches) == 6
    assert len(graph.links) == 6
    assert all(l.capacity_bps == 1e9 for l in graph.links.values())
    assert all(l.propagation_s == 0.00005 for l in graph.links.values())


def test_unknown_link_endpoint_rejected():
    doc = bare_ring6()
    doc["links"].append(
        {
            "id": "bad",
            "a": {"node": "S1", "port": 2},
            "b": {"node": "nope", "port": 0},
            "capacity_bps": 1e9,
            "propagation_s": 0.0,
        }
    )
    with pytest.raises(ScenarioError, match="unknown endpoint"):
        load_scenario_dict(doc)


def test_queue_oversubscription_rejected():
    doc = bare_ring6()
    doc["queues"] = [
        {"node": "S1", "port": 0, "queue": 1, "rate_bps": 1.2e9, "latency_s": 0}
    ]
    with pytest.raises(ScenarioError, match="queue oversubscription"):
        load_scenario_dict(doc)


def test_multiple_rt_queues_rejected():
    doc = bare_ring6()
    doc["queues"] = [
        {"node": "S1", "port": 0, "queue": 1, "rate_bps": 3e8, "latency_s": 0},
        {"node": "S1", "port": 0, "queue": 2, "rate_bps": 3e8, "latency_s": 0},
    ]
    with pytest.raises(ScenarioError, match="multiple real-time queues"):
        load_scenario_dict(doc)


def test_sensor_must_attach_to_gateway():
    doc = bare_ring6()
    doc["nodes"].append({"id": "sense1", "kind": "sensor", "domain": "park"})
    doc["links"].append(
        {
            "id": "sl",
            "a": {"node": "sense1", "port": 0},
            "b": {"node": "S1", "port": 2},
            "capacity_bps": 1e6,
            "propagation_s": 0.0,
        }
    )
    with pytest.raises(ScenarioError, match="iiot-gateway"):
        load_scenario_dict(doc)


def test_link_event_versions_and_events(ring6_graph):
    graph, _ = ring6_graph
    events = []
    graph.subscribe(events.append)
    v0 = graph.version

    assert graph.apply_link_event("R1", "down") is True
    assert graph.version == v0 + 1
    assert len(events) == 1
    assert (events[0].old_state, events[0].new_state) == ("up", "down")

    # idempotent no-op
    assert graph.apply_link_event("R1", "down") is False
    assert graph.version == v0 + 1
    assert len(events) == 1

    assert graph.apply_link_event("R1", "up") is True
    assert len(events) == 2
    assert [e.new_state for e in events] == ["down", "up"]
    assert events[0].version < events[1].version


def test_unknown_link_event_rejected(ring6_graph):
    graph, _ = ring6_graph
    with pytest.raises(UnknownEntityError):
        graph.apply_link_event("nolink", "down")


def test_invariants_hold_after_event_sequences(ring6_graph):
    graph, _ = ring6_graph
    for state in ("down", "up", "down", "up"):
        graph.apply_link_event("R3", state)
        graph.validate()


def test_snapshot_reflects_state_and_is_stable(ring6_graph):
    graph, _ = ring6_graph
    s1 = graph.snapshot()
    s2 = graph.snapshot()
    assert s1 == s2
    graph.apply_link_event("R2", "down")
    s3 = graph.snapshot()
    assert s3 != s1
    assert [l for l in s3["links"] if l["id"] == "R2"][0]["state"] == "down"


def test_workload_parsed(ring6_graph):
    _, workload = ring6_graph
    assert [t.id for t in workload.tenants] == ["opergrid", "maint"]
    assert workload.intents[0].id == "scada-loop"
    assert workload.intents[0].delay_req_s == 0.03
    assert workload.sim.duration_s == 10.0


def test_failure_outside_duration_rejected():
    doc = ring6()
    doc["failures"] = [{"time_s": 99.0, "target": "R1", "event": "down"}]
    with pytest.raises(ScenarioError, match="outside run duration"):
        load_scenario_dict(doc)


def test_ports_must_be_dense():
    doc = bare_ring6()
    doc["links"][0]["a"]["port"] = 7
    with pytest.raises(ScenarioError, match="dense"):
        load_scenario_dict(doc)
