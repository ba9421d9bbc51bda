"""Batch CLI: bootstrap, run-scenario, inspect, oracle, serve, report.

Human-friendly unit suffixes (30ms, 10Mbps) are accepted on the command line
and converted to canonical units (seconds, bits/second) at this boundary.
"""

from __future__ import annotations

import argparse
import json
import os
import random
import sys
from pathlib import Path

from .errors import WindctlError
from .units import parse_time


def _load_doc(path: str) -> dict:
    return json.loads(Path(path).read_text())


def _fail(error: Exception) -> int:
    detail = (
        error.to_dict() if isinstance(error, WindctlError)
        else {"error": "internal", "detail": str(error)}
    )
    print(json.dumps(detail), file=sys.stderr)
    return 1


def cmd_bootstrap(args) -> int:
    from .runner import Deployment
    from .topology import load_scenario_dict

    graph, workload = load_scenario_dict(_load_doc(args.scenario))
    deployment = Deployment.build(graph, workload)
    summary = {}
    for domain, ctrl in sorted(deployment.controllers.items()):
        if ctrl.bootstrap_plan is None:
            continue
        plan = ctrl.bootstrap_plan
        summary[domain] = {
            "seed_controller": plan.seed_controller,
            "adoption_order": plan.adoption_order,
            "controller_placement": plan.controller_placement,
            "control_flows": len(plan.control_specs),
            "max_control_distance": plan.max_control_distance,
        }
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_run_scenario(args) -> int:
    from .runner import run_scenario

    doc = _load_doc(args.scenario)
    result = run_scenario(
        doc,
        seed=args.seed,
        duration_s=parse_time(args.duration) if args.duration else None,
        capture_trace=bool(args.trace),
    )
    metrics = result.metrics
    out = Path(args.out)
    out.write_text(metrics.to_json())
    if args.trace:
        with open(args.trace, "w") as fh:
            for record in result.trace:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
    if args.audit:
        with open(args.audit, "w") as fh:
            for domain in sorted(result.deployment.controllers):
                ctrl = result.deployment.controllers[domain]
                fh.write(ctrl.sm.dump_audit_ndjson())
    print(
        f"run complete: {len(metrics.flows)} flows, "
        f"{metrics.event_count} events, wall {metrics.wall_time_s:.3f}s, "
        f"metrics -> {out}"
    )
    violations = [
        fm.flow_id
        for fm in metrics.flows.values()
        if fm.bound_s is not None
        and fm.max_delay_s is not None
        and fm.max_delay_s > fm.bound_s + 1e-9
    ]
    if violations:
        print(json.dumps({"error": "bound-violation", "flows": violations}),
              file=sys.stderr)
        return 1
    return 0


def cmd_inspect(args) -> int:
    from .runner import Deployment
    from .topology import load_scenario_dict

    graph, workload = load_scenario_dict(_load_doc(args.scenario))
    if args.what == "topology":
        print(json.dumps(graph.snapshot(), indent=2, sort_keys=True))
        return 0
    deployment = Deployment.build(graph, workload)
    if args.what == "offers":
        offers = {}
        if deployment.qor is not None:
            offers = {
                domain: [o.to_dict() for o in items]
                for domain, items in sorted(deployment.qor.offers.items())
            }
        print(json.dumps(offers, indent=2, sort_keys=True))
        return 0
    # rules
    deployment.process_intents()
    dump = []
    mismatches = []
    for domain, ctrl in sorted(deployment.controllers.items()):
        for flow_id, rules in sorted(ctrl.resources.rules_by_flow.items()):
            dump.append(
                {
                    "domain": domain,
                    "flow_id": flow_id,
                    "rules": [r.to_dict() for r in rules],
                }
            )
            embedding = ctrl.engine.embeddings.get(flow_id)
            if embedding is not None:
                expected = ctrl.resources.expected_rule_count(embedding)
                if expected != len(rules):
                    mismatches.append(flow_id)
    print(json.dumps({"rule_sets": dump, "count_mismatches": mismatches},
                     indent=2, sort_keys=True))
    return 0 if not mismatches else 1


def cmd_oracle(args) -> int:
    ok = True
    results = {}
    if args.suite in ("routing", "all"):
        results["routing"] = _oracle_routing(args.graphs, args.seed)
        ok = ok and results["routing"]["failures"] == 0
    if args.suite in ("interdomain", "all"):
        results["interdomain"] = _oracle_interdomain(args.graphs, args.seed)
        ok = ok and results["interdomain"]["failures"] == 0
    print(json.dumps(results, indent=2, sort_keys=True))
    return 0 if ok else 1


def _oracle_routing(count: int, seed: int) -> dict:
    from .oracles import (
        brute_force_constrained_path,
        brute_force_disjoint_pair,
        make_flow,
    )
    from .pathing import PathEngine, path_nodes
    from .scenarios import random_scenario
    from .topology import load_scenario_dict

    checked = failures = 0
    for i in range(count):
        doc = random_scenario(seed + i, max_switches=8, max_flows=4)
        graph, _ = load_scenario_dict(doc)
        engine = PathEngine(graph, "dom")
        rng = random.Random(seed + i)
        hosts = [n.id for n in graph.nodes.values() if n.kind == "host"]
        switches = sorted(n.id for n in graph.nodes.values()
                          if n.kind == "switch")
        for _trial in range(3):
            src, dst = rng.sample(hosts, 2)
            spec = make_flow(f"o{_trial}", src, dst, rng.choice([1e5, 1e6]),
                             rng.choice([2000, 8000]),
                             rng.choice([0.005, 0.05]))
            got = engine.compute_constrained_path(spec)
            want = brute_force_constrained_path(engine, spec)
            checked += 1
            if (got is None) != (want is None):
                failures += 1
            elif got is not None and (
                len(got[0]) != want[0]
                or path_nodes(graph, src, got[0]) != want[1]
            ):
                failures += 1
        if len(switches) >= 2:
            src, dst = rng.sample(switches, 2)
            a, b, shared = engine.compute_disjoint_pair(src, dst)
            want = brute_force_disjoint_pair(graph, src, dst, "dom")
            checked += 1
            if (shared, len(a) + len(b)) != want:
                failures += 1
    return {"checked": checked, "failures": failures}


def _oracle_interdomain(count: int, seed: int) -> dict:
    from .interdomain import PathSegmentOffer, Qor
    from .oracles import enumerate_offer_chains
    from .scenarios import random_segment_world

    checked = failures = 0
    for i in range(count):
        descriptors, offers, adjacency, src, dst = random_segment_world(seed + i)
        qor = Qor(clock=lambda: 0.0)
        qor.security.add_account("admin", "pw")
        token = qor.security.authenticate(
            {"username": "admin", "password": "pw"}
        ).value
        for desc in descriptors:
            qor.register_domain(desc, token)
        for domain, items in offers.items():
            qor.announce_offers(domain, items, token)
        rng = random.Random(seed + i + 4096)
        for _trial in range(3):
            budget = rng.choice([0.005, 0.02, 0.05, 0.2])
            need = rng.choice([10e6, 50e6, 200e6])
            got = qor.compute_e2e_path(src, dst, budget, need)
            want = enumerate_offer_chains(
                {d: [PathSegmentOffer.from_dict(o) for o in items]
                 for d, items in offers.items()},
                adjacency, src, dst, budget, need, 0.0,
            )
            checked += 1
            if (got is None) != (want is None):
                failures += 1
            elif got is not None and sum(o.cost for o in got.offers) != want[0]:
                failures += 1
    return {"checked": checked, "failures": failures}


def cmd_serve(args) -> int:
    from .service import ServeConfig, serve

    config_doc = {}
    config_path = args.config or os.environ.get("WINDCTL_CONFIG")
    if config_path:
        config_doc = _load_doc(config_path)
    config = ServeConfig(
        role=args.role or config_doc.get("role", "qor"),
        port=args.port or int(config_doc.get("port", 8460)),
        host=config_doc.get("host", "127.0.0.1"),
        scenario_path=args.scenario or config_doc.get("scenario"),
        domain=args.domain or config_doc.get("domain"),
        portal_dir=args.portal_dir or config_doc.get("portal_dir"),
        accounts=config_doc.get("accounts", {}),
    )
    server = serve(config)
    print(f"serving role={config.role} on http://{config.host}:{config.port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
    return 0


def cmd_report(args) -> int:
    from .report import render_report

    written = render_report(args.metrics, args.trace, args.out_dir)
    for path in written:
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="windctl",
        description="Industrial SDN/NFV control-plane testbench",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("bootstrap", help="plan and execute control-plane bring-up")
    p.add_argument("scenario")
    p.set_defaults(fn=cmd_bootstrap)

    p = sub.add_parser("run-scenario", help="bootstrap, embed intents, simulate")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--duration", default=None,
                   help="override run duration (accepts s/ms suffixes)")
    p.add_argument("--out", default="metrics.json")
    p.add_argument("--trace", default=None, help="write NDJSON event trace")
    p.add_argument("--audit", default=None,
                   help="write the NDJSON security audit log")
    p.set_defaults(fn=cmd_run_scenario)

    p = sub.add_parser("inspect", help="dump topology, offers or rules")
    p.add_argument("scenario")
    p.add_argument("--what", choices=["topology", "offers", "rules"],
                   required=True)
    p.set_defaults(fn=cmd_inspect)

    p = sub.add_parser("oracle", help="run brute-force cross-checks")
    p.add_argument("suite", choices=["routing", "interdomain", "all"])
    p.add_argument("--graphs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_oracle)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--role", choices=["industrial-controller",
                                      "nsp-controller", "qor"])
    p.add_argument("--scenario")
    p.add_argument("--domain")
    p.add_argument("--port", type=int)
    p.add_argument("--portal-dir")
    p.add_argument("--config", help="JSON config (or WINDCTL_CONFIG env var)")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("report", help="render figures and CSV from metrics")
    p.add_argument("metrics")
    p.add_argument("--trace", default=None)
    p.add_argument("--out-dir", default="report")
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except WindctlError as e:
        return _fail(e)
    except FileNotFoundError as e:
        return _fail(WindctlError(str(e)))


if __name__ == "__main__":
    sys.exit(main())
