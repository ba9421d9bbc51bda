"""Shared fault-injection drivers for the replicated-store tests."""

from __future__ import annotations

import random

from windctl.cluster import BusFault, Cluster, Shard


def random_fault(rng: random.Random, n: int, start: float, span: float) -> BusFault:
    kind = rng.choice(["delay", "drop", "partition"])
    end = start + rng.uniform(0.2, span)
    if kind == "delay":
        return BusFault("delay", start, end, delay_s=rng.uniform(0.02, 0.15))
    if kind == "drop":
        return BusFault("drop", start, end, drop_p=rng.uniform(0.2, 0.6))
    members = list(range(n))
    rng.shuffle(members)
    cut = rng.randint(1, n - 1)
    return BusFault(
        "partition", start, end,
        groups=(frozenset(members[:cut]), frozenset(members[cut:])),
    )


def run_strong_history(seed: int, ops: int = 10, n: int = 3) -> Cluster:
    """One randomized concurrent history on a single strong key."""
    rng = random.Random(seed)
    cluster = Cluster(n=n, seed=seed)
    cluster.run_for(1.0)  # settle initial election

    start = cluster.bus.now
    for _ in range(rng.randint(1, 2)):
        cluster.add_fault(
            random_fault(rng, n, start + rng.uniform(0.0, 1.5), span=1.0)
        )
    if rng.random() < 0.3:
        victim = rng.randrange(n)
        t_crash = rng.uniform(0.2, 1.0)
        t_back = t_crash + rng.uniform(0.3, 1.0)
        cluster.bus.schedule(t_crash, lambda v=victim: cluster.crash(v))
        cluster.bus.schedule(t_back, lambda v=victim: cluster.recover(v))

    value = 0
    for i in range(ops):
        at = rng.uniform(0.0, 2.5)
        if rng.random() < 0.6:
            value += 1
            cluster.bus.schedule(
                at, lambda v=value: cluster.write_strong("x", v, lambda _r: None)
            )
        else:
            cluster.bus.schedule(
                at, lambda: cluster.read_strong("x", lambda _r: None)
            )
    cluster.run_for(8.0)
    return cluster


def run_adaptive_schedule(seed: int, k: int, writes: int = 12, n: int = 3):
    """Randomized adaptive writes with faults; returns (cluster, lag samples)."""
    rng = random.Random(seed)
    cluster = Cluster(
        shards=[Shard("cache", "adaptive", prefix="", k=k)], n=n, seed=seed
    )
    cluster.run_for(0.2)
    for _ in range(rng.randint(0, 2)):
        cluster.add_fault(
            random_fault(rng, n, cluster.bus.now + rng.uniform(0, 1.0), span=0.8)
        )
    lags: list[int] = []
    done = {"count": 0}

    def one_write(i: int) -> None:
        origin = rng.randrange(n)
        cluster.write_adaptive(
            f"key{i % 3}", (i, origin),
            lambda _r: done.__setitem__("count", done["count"] + 1),
            origin=origin,
        )

    t = 0.0
    for i in range(writes):
        t += rng.uniform(0.01, 0.3)
        cluster.bus.schedule(t, lambda i=i: one_write(i))
        # sample lag shortly after each write lands (a quiescent client point)
        cluster.bus.schedule(t + 0.001, lambda: lags.append(cluster.adaptive_lag("cache")))
    cluster.run_for(t + 8.0)
    return cluster, lags
