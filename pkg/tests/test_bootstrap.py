from itertools import combinations

import pytest

from windctl.bootstrap import execute_bootstrap, plan_bootstrap
from windctl.controller import Controller
from windctl.errors import CapacityError
from windctl.netcalc import ArrivalCurve
from windctl.scenarios import Builder, ring6
from windctl.topology import load_scenario_dict

CONTROL = ArrivalCurve(50_000, 4_000)


def ring_controller():
    graph, workload = load_scenario_dict(ring6())
    return Controller(graph, "park", replicas=1), graph


def exhaustive_placement(graph, seed_switch, k):
    """Independent oracle: brute-force min-max-distance placement."""
    switches = sorted(
        n.id for n in graph.nodes.values() if n.kind == "switch"
    )

    def hops(a, b):
        dist = {a: 0}
        frontier = [a]
        while frontier:
            nxt = []
            for node in frontier:
                for link in graph.links_at(node):
                    peer = link.other(node).node
                    if peer in switches and peer not in dist:
                        dist[peer] = dist[node] + 1
                        nxt.append(peer)
            frontier = nxt
        return dist[b]

    best = None
    for extra in combinations([s for s in switches if s != seed_switch], k - 1):
        placement = (seed_switch,) + extra
        worst = max(min(hops(p, s) for p in placement) for s in switches)
        if best is None or worst < best:
            best = worst
    return best


class TestPlanning:
    def test_ring6_single_controller(self):
        ctrl, graph = ring_controller()
        plan = plan_bootstrap(graph, ctrl.engine, "C1", 1, CONTROL)
        assert len(plan.adoption_order) == 6
        assert plan.adoption_order[0] == "S1"
        # BFS levels never decrease
        levels = {"S1": 0}
        for s in plan.adoption_order[1:]:
            neighbors = [
                l.other(s).node for l in graph.links_at(s)
                if l.other(s).node in levels
            ]
            levels[s] = min(levels[n] for n in neighbors) + 1
        order_levels = [levels[s] for s in plan.adoption_order]
        assert order_levels == sorted(order_levels)
        # one control flow per connected switch, each on two disjoint arcs
        assert len(plan.control_specs) == 6
        for emb in plan.planned_embeddings:
            assert emb.spec.protection == "one-plus-one"
            ring_a = [l for l in emb.primary if l.startswith("R")]
            ring_b = [l for l in (emb.backup or []) if l.startswith("R")]
            assert set(ring_a).isdisjoint(ring_b)

    def test_replica3_placement_matches_exhaustive_oracle(self):
        ctrl, graph = ring_controller()
        plan = plan_bootstrap(graph, ctrl.engine, "C1", 3, CONTROL)
        assert len(plan.controller_placement) == 3
        assert "S1" in plan.controller_placement
        oracle = exhaustive_placement(graph, "S1", 3)
        assert plan.max_control_distance == oracle == 1

    def test_single_switch_graph(self):
        b = Builder()
        b.doc["domains"].append({"id": "d", "kind": "industrial"})
        b.node("SW", "switch", "d")
        b.node("C", "controller", "d")
        b.link("C", "SW", 1e9, 1e-5)
        b.rt_queues_everywhere()
        graph, _ = load_scenario_dict(b.doc)
        ctrl = Controller(graph, "d", replicas=1)
        plan = plan_bootstrap(graph, ctrl.engine, "C", 1, CONTROL)
        assert plan.adoption_order == ["SW"]
        assert len(plan.control_specs) == 1
        # the single attachment link is the whole path; no ring hops
        emb = plan.planned_embeddings[0]
        assert len(emb.primary) == 1

    def test_plan_is_pure(self):
        ctrl, graph = ring_controller()
        before = {k: dict(v.flows) for k, v in ctrl.engine.loads.items()}
        plan_bootstrap(graph, ctrl.engine, "C1", 3, CONTROL)
        after = {k: dict(v.flows) for k, v in ctrl.engine.loads.items()}
        assert before == after
        assert ctrl.engine.embeddings == {}


class TestExecution:
    def test_execute_installs_and_is_idempotent(self):
        ctrl, graph = ring_controller()
        plan = plan_bootstrap(graph, ctrl.engine, "C1", 1, CONTROL)
        execute_bootstrap(plan, ctrl)
        assert ctrl.adopted_switches == plan.adoption_order
        assert len(ctrl.engine.embeddings) == 6
        assert ctrl.store.cluster.current_leader() is not None
        placement = ctrl.store.get("bootstrap:placement")
        assert placement["replicas"] == plan.controller_placement
        rules_before = len(ctrl.resources.installed_rules())
        execute_bootstrap(plan, ctrl)  # no-op
        assert len(ctrl.resources.installed_rules()) == rules_before

    def test_reserved_bandwidth_doubled_per_control_flow(self):
        ctrl, graph = ring_controller()
        plan = plan_bootstrap(graph, ctrl.engine, "C1", 1, CONTROL)
        execute_bootstrap(plan, ctrl)
        for emb in ctrl.engine.embeddings.values():
            assert emb.reserved_rate_bps == 2 * CONTROL.rate

    def test_midplan_failure_rolls_back_everything(self):
        ctrl, graph = ring_controller()
        plan = plan_bootstrap(graph, ctrl.engine, "C1", 1, CONTROL)
        graph.nodes["S5"].table_capacity = 0  # breaks flows crossing S5
        with pytest.raises(CapacityError):
            execute_bootstrap(plan, ctrl)
        assert ctrl.engine.embeddings == {}
        assert ctrl.resources.installed_rules() == []
        assert ctrl.bootstrap_plan is None

    def test_single_failure_leaves_intact_control_path(self):
        ctrl, graph = ring_controller()
        plan = plan_bootstrap(graph, ctrl.engine, "C1", 1, CONTROL)
        execute_bootstrap(plan, ctrl)
        for ring_link in (f"R{i}" for i in range(1, 7)):
            graph.apply_link_event(ring_link, "down")
            for emb in ctrl.engine.embeddings.values():
                intact = [
                    path
                    for _c, path in emb.paths()
                    if all(graph.links[l].state == "up" for l in path)
                ]
                assert intact, f"{emb.flow_id} lost both paths on {ring_link}"
            graph.apply_link_event(ring_link, "up")
