import json

import pytest

from windctl.scenarios import ring6
from windctl.topology import load_scenario


@pytest.fixture
def ring6_graph():
    graph, workload = load_scenario(json.dumps(ring6()))
    return graph, workload
