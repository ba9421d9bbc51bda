"""Single-key register linearizability checking over recorded histories.

Wing-Gong style search with memoization. Operations that never received a
response ("maybe") are handled by trying every subset of maybe-writes as
having taken effect; maybe-reads impose no constraint and are dropped.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace


@dataclass(frozen=True)
class HistOp:
    op_id: int
    kind: str  # "w" | "r"
    value: object  # written value, or observed value for reads
    invoke: float
    respond: float | None  # None for ops with no response
    status: str = "ok"  # ok | fail | maybe


def check_linearizable(history: list[HistOp], init=None) -> bool:
    """True when the single-register history admits a linearization."""
    definite = [op for op in history if op.status == "ok"]
    maybe_writes = [
        op for op in history if op.status == "maybe" and op.kind == "w"
    ]
    # failed ops never took effect; maybe-reads returned nothing to anyone.
    for subset_size in range(len(maybe_writes) + 1):
        for subset in itertools.combinations(maybe_writes, subset_size):
            ops = definite + [
                replace(op, respond=float("inf"), status="ok") for op in subset
            ]
            if _search(ops, init):
                return True
    return False


def _search(ops: list[HistOp], init) -> bool:
    if not ops:
        return True
    ops = sorted(ops, key=lambda o: (o.invoke, o.op_id))
    ids = {op.op_id: op for op in ops}

    def precedes(a: HistOp, b: HistOp) -> bool:
        return a.respond is not None and a.respond < b.invoke

    preds: dict[int, frozenset[int]] = {
        b.op_id: frozenset(a.op_id for a in ops if precedes(a, b)) for b in ops
    }

    seen: set[tuple[frozenset, object]] = set()

    def step(done: frozenset, value) -> bool:
        if len(done) == len(ops):
            return True
        key = (done, value)
        if key in seen:
            return False
        seen.add(key)
        # Earliest response among remaining completed ops caps who can go next:
        # an op can only linearize now if it was invoked before every pending
        # response deadline, i.e. it is minimal w.r.t. the precedence order.
        for op in ops:
            if op.op_id in done:
                continue
            if not preds[op.op_id] <= done:
                continue
            if op.kind == "w":
                if step(done | {op.op_id}, op.value):
                    return True
            else:
                if op.value == value and step(done | {op.op_id}, value):
                    return True
        return False

    return step(frozenset(), init)
