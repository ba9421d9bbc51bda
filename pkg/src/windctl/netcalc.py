"""Deterministic worst-case delay modeling.

Token-bucket arrival curves, rate-latency service curves, FIFO aggregation
per queue. The per-hop delay bound is T + b/R for aggregate burst b; the
end-to-end bound is the plain sum of per-hop bounds plus propagation delays.
Summation without concatenation is deliberately conservative: it keeps the
bound sound against the packet simulator hop by hop.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

from .errors import InstabilityError


@dataclass(frozen=True)
class ArrivalCurve:
    """Token-bucket traffic envelope: at most burst + rate * t bits in any t."""

    rate: float  # bits/second
    burst: float  # bits

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError(f"arrival rate must be >= 0, got {self.rate}")
        if self.burst < 0:
            raise ValueError(f"arrival burst must be >= 0, got {self.burst}")

    def __add__(self, other: "ArrivalCurve") -> "ArrivalCurve":
        return ArrivalCurve(self.rate + other.rate, self.burst + other.burst)


@dataclass(frozen=True)
class ServiceCurve:
    """Rate-latency guarantee: service at rate R after latency at most T."""

    rate: float  # bits/second
    latency: float  # seconds

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError(f"service rate must be > 0, got {self.rate}")
        if self.latency < 0:
            raise ValueError(f"service latency must be >= 0, got {self.latency}")


def aggregate(curves: Iterable[ArrivalCurve]) -> ArrivalCurve:
    """Sum of token buckets: (sum of rates, sum of bursts).

    >>> aggregate([])
    ArrivalCurve(rate=0.0, burst=0.0)
    >>> aggregate([ArrivalCurve(1e6, 12000), ArrivalCurve(2e6, 8000)])
    ArrivalCurve(rate=3000000.0, burst=20000.0)
    """
    r = 0.0
    b = 0.0
    for c in curves:
        r += c.rate
        b += c.burst
    return ArrivalCurve(r, b)


def hop_delay_bound(service: ServiceCurve, agg: ArrivalCurve) -> float:
    """Worst-case FIFO delay at one hop: T + b/R.

    Raises InstabilityError when the aggregate rate exceeds the service rate.

    >>> hop_delay_bound(ServiceCurve(10e6, 0.0001), ArrivalCurve(1e6, 12000))
    0.0013
    """
    if agg.rate > service.rate:
        raise InstabilityError(
            f"aggregate rate {agg.rate} exceeds service rate {service.rate}"
        )
    return service.latency + agg.burst / service.rate


@dataclass
class QueueLoad:
    """Flows embedded at one queue, keyed by flow (or flow copy) id."""

    service: ServiceCurve
    flows: dict[Hashable, ArrivalCurve] = field(default_factory=dict)
    queue_ref: Hashable | None = None

    def aggregate(self) -> ArrivalCurve:
        return aggregate(self.flows.values())

    def residual_rate(self) -> float:
        """Unreserved service rate; negative only during what-if evaluation."""
        return self.service.rate - self.aggregate().rate

    def delay_bound(self) -> float:
        return hop_delay_bound(self.service, self.aggregate())

    def add(self, flow_id: Hashable, curve: ArrivalCurve) -> None:
        if flow_id in self.flows:
            raise ValueError(f"flow {flow_id!r} already embedded at this queue")
        self.flows[flow_id] = curve

    def remove(self, flow_id: Hashable) -> None:
        del self.flows[flow_id]


def e2e_delay_bound(
    hops: Sequence[QueueLoad], propagation: Sequence[float]
) -> float:
    """Sum of per-hop bounds plus propagation delays.

    The candidate flow must already be included in every hop's QueueLoad.
    Raises InstabilityError naming the first unstable hop.
    """
    total = 0.0
    for i, load in enumerate(hops):
        agg = load.aggregate()
        if agg.rate > load.service.rate:
            raise InstabilityError(
                f"hop {i} unstable: aggregate {agg.rate} > service {load.service.rate}",
                hop=i,
            )
        total += load.service.latency + agg.burst / load.service.rate
    return total + sum(propagation)
