import random

import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from windctl.errors import InstabilityError
from windctl.netcalc import (
    ArrivalCurve,
    QueueLoad,
    ServiceCurve,
    aggregate,
    e2e_delay_bound,
    hop_delay_bound,
)

curves = st.builds(
    ArrivalCurve,
    rate=st.floats(0, 1e9, allow_nan=False),
    burst=st.floats(0, 1e6, allow_nan=False),
)


def test_aggregate_empty():
    assert aggregate([]) == ArrivalCurve(0.0, 0.0)


def test_aggregate_identity():
    c = ArrivalCurve(1e6, 12_000)
    assert aggregate([c]) == c


def test_aggregate_additivity():
    agg = aggregate([ArrivalCurve(1e6, 12_000), ArrivalCurve(2e6, 8_000)])
    assert agg == ArrivalCurve(3e6, 20_000)


@given(st.lists(curves, max_size=6))
def test_aggregate_commutative(cs):
    rng = random.Random(0)
    shuffled = list(cs)
    rng.shuffle(shuffled)
    a, b = aggregate(cs), aggregate(shuffled)
    assert a.rate == pytest.approx(b.rate)
    assert a.burst == pytest.approx(b.burst)


@given(st.lists(curves, min_size=2, max_size=6), st.integers(1, 5))
def test_aggregate_associative(cs, split):
    split = split % len(cs)
    grouped = aggregate([aggregate(cs[:split]), aggregate(cs[split:])])
    flat = aggregate(cs)
    assert grouped.rate == pytest.approx(flat.rate)
    assert grouped.burst == pytest.approx(flat.burst)


def test_hop_delay_closed_form():
    # 0.1 ms latency + 12000 b / 10 Mb/s = 1.3 ms
    d = hop_delay_bound(ServiceCurve(10e6, 0.0001), ArrivalCurve(1e6, 12_000))
    assert d == pytest.approx(0.0013)


def test_hop_delay_latency_only():
    assert hop_delay_bound(ServiceCurve(5e6, 0.002), ArrivalCurve(0, 0)) == 0.002


def test_hop_delay_instability():
    with pytest.raises(InstabilityError):
        hop_delay_bound(ServiceCurve(10e6, 0), ArrivalCurve(11e6, 100))


def test_e2e_three_identical_hops():
    load = QueueLoad(ServiceCurve(10e6, 0.0001), {"f": ArrivalCurve(1e6, 12_000)})
    loads = [
        QueueLoad(load.service, dict(load.flows)),
        QueueLoad(load.service, dict(load.flows)),
        QueueLoad(load.service, dict(load.flows)),
    ]
    assert e2e_delay_bound(loads, [0, 0, 0]) == pytest.approx(3 * 0.0013)


def test_e2e_propagation_only():
    assert e2e_delay_bound([], [0.0005]) == pytest.approx(0.0005)


def test_e2e_names_first_unstable_hop():
    good = QueueLoad(ServiceCurve(10e6, 0), {"f": ArrivalCurve(1e6, 100)})
    bad = QueueLoad(ServiceCurve(10e6, 0), {"f": ArrivalCurve(11e6, 100)})
    with pytest.raises(InstabilityError) as exc:
        e2e_delay_bound([good, bad], [0, 0])
    assert exc.value.hop == 1


def test_e2e_matches_term_by_term_resummation():
    # Independent oracle: recompute every term and sum separately.
    rng = random.Random(1234)
    for _ in range(50):
        hops = []
        props = []
        for _ in range(rng.randint(1, 6)):
            service = ServiceCurve(rng.uniform(1e6, 1e9), rng.uniform(0, 1e-3))
            flows = {
                f"f{i}": ArrivalCurve(rng.uniform(0, service.rate / 8),
                                      rng.uniform(0, 50_000))
                for i in range(rng.randint(0, 4))
            }
            hops.append(QueueLoad(service, flows))
            props.append(rng.uniform(0, 1e-4))
        expected = 0.0
        for load, prop in zip(hops, props):
            burst = sum(c.burst for c in load.flows.values())
            expected += load.service.latency + burst / load.service.rate + prop
        assert e2e_delay_bound(hops, props) == pytest.approx(expected, rel=1e-12)


def test_residual_rate():
    load = QueueLoad(ServiceCurve(10e6, 0))
    assert load.residual_rate() == 10e6
    load.add("a", ArrivalCurve(1e6, 1000))
    load.add("b", ArrivalCurve(2e6, 1000))
    assert load.residual_rate() == pytest.approx(7e6)


def test_residual_admit_release_inverse():
    load = QueueLoad(ServiceCurve(10e6, 0), {"x": ArrivalCurve(3e6, 500)})
    before = load.residual_rate()
    load.add("y", ArrivalCurve(1e6, 100))
    load.remove("y")
    assert load.residual_rate() == before


@given(
    st.lists(curves, max_size=4),
    curves,
    st.floats(0, 1e-3, allow_nan=False),
)
def test_monotonicity_adding_flow_never_decreases_bound(base, extra, latency):
    service = ServiceCurve(4e9, latency)
    flows = {f"f{i}": c for i, c in enumerate(base)}
    assume(sum(c.rate for c in flows.values()) + extra.rate <= service.rate)
    without = e2e_delay_bound([QueueLoad(service, dict(flows))], [0.0])
    flows["extra"] = extra
    with_extra = e2e_delay_bound([QueueLoad(service, dict(flows))], [0.0])
    assert with_extra >= without
