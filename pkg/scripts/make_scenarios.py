#!/usr/bin/env python3
"""Regenerate the committed scenario fixtures in scenarios/."""

import json
from pathlib import Path

from windctl.scenarios import interdomain, ring6

OUT = Path(__file__).resolve().parent.parent / "scenarios"


def main() -> None:
    OUT.mkdir(exist_ok=True)
    fixtures = {
        "ring6.json": ring6(),
        "ring6_fast_failover.json": ring6(
            protection="fast-failover",
            failures=[{"time_s": 2.0, "target": "R2", "event": "down"}],
        ),
        "ring6_one_plus_one.json": ring6(
            protection="one-plus-one",
            failures=[{"time_s": 2.0, "target": "R3", "event": "down"}],
        ),
        "interdomain.json": interdomain(),
    }
    for name, doc in fixtures.items():
        target = OUT / name
        target.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        print(target)


if __name__ == "__main__":
    main()
