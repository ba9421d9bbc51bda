"""Replicated controller data-store.

Per-shard consistency: strong shards run a simplified term-based
leader/majority replication protocol (leader election with a pre-configured
priority order, prefix-consistent committed logs, majority commit); adaptive
shards apply writes locally and propagate asynchronously, blocking writers
whose count of un-propagated local updates would exceed the shard's staleness
bound k.

All inter-replica traffic crosses a seeded virtual-time message bus; the bus
is the only source of nondeterminism and supports delay, drop and partition
fault injection plus replica crash/recover.
"""

from __future__ import annotations

import heapq
import itertools
import random
from dataclasses import dataclass

from .errors import StoreUnavailableError, SyncTimeoutError, WindctlError
from .linearize import HistOp


@dataclass
class Shard:
    shard_id: str
    mode: str  # "strong" | "adaptive"
    prefix: str
    k: int = 0  # staleness bound, adaptive shards only


@dataclass
class BusFault:
    kind: str  # "delay" | "drop" | "partition"
    start_s: float
    end_s: float
    delay_s: float = 0.0
    drop_p: float = 0.0
    groups: tuple[frozenset, ...] = ()

    def active(self, now: float) -> bool:
        return self.start_s <= now < self.end_s


class VirtualBus:
    """Deterministic event scheduler with message fault injection."""

    def __init__(self, seed: int = 0, base_delay_s: float = 0.001):
        self.now = 0.0
        self.seed = seed
        self.rng = random.Random(seed)
        self.base_delay_s = base_delay_s
        self.faults: list[BusFault] = []
        self._heap: list[tuple[float, int, object]] = []
        self._seq = itertools.count()

    def schedule(self, delay_s: float, fn) -> None:
        heapq.heappush(self._heap, (self.now + delay_s, next(self._seq), fn))

    def send(self, src: int, dst: int, fn) -> None:
        """Replica-to-replica message; subject to active faults."""
        delay = self.base_delay_s
        for fault in self.faults:
            if not fault.active(self.now):
                continue
            if fault.kind == "partition" and not self._same_group(src, dst, fault):
                return
            if fault.kind == "drop" and self.rng.random() < fault.drop_p:
                return
            if fault.kind == "delay":
                delay += fault.delay_s
        self.schedule(delay, fn)

    @staticmethod
    def _same_group(src: int, dst: int, fault: BusFault) -> bool:
        for group in fault.groups:
            if src in group and dst in group:
                return True
        return False

    def run_until(self, t: float) -> None:
        while self._heap and self._heap[0][0] <= t:
            when, _, fn = heapq.heappop(self._heap)
            self.now = max(self.now, when)
            fn()
        self.now = max(self.now, t)

    def pending(self) -> int:
        return len(self._heap)


@dataclass
class Entry:
    term: int
    index: int
    kind: str  # "w" | "r"
    key: str
    value: object = None
    op_id: int = 0


@dataclass
class _PendingWrite:
    op_id: int
    entry_index: int
    on_done: object


class Replica:
    """One logical controller instance participating in replication."""

    def __init__(self, cluster: "Cluster", rid: int, priority: int):
        self.cluster = cluster
        self.rid = rid
        self.priority = priority  # lower value leads first
        self.crashed = False

        # strong shard state
        self.role = "follower"
        self.term = 0
        self.voted_for: dict[int, int] = {}  # term -> candidate
        self.log: list[Entry] = []
        self.commit_index = 0  # number of committed entries
        self.kv: dict[str, object] = {}
        self.applied = 0
        self.next_index: dict[int, int] = {}
        self.match_index: dict[int, int] = {}
        self.votes: set[int] = set()
        self.last_contact: dict[int, float] = {}
        self._pending: list[_PendingWrite] = []
        self._timer_epoch = 0

        # adaptive shard state
        self.lamport = 0
        self.adaptive_kv: dict[str, tuple[tuple[int, int], object]] = {}
        self.pending_updates: dict[str, dict[int, dict]] = {}  # shard -> uid -> msg
        self.blocked: dict[str, list] = {}
        self.applied_counts: dict[tuple[str, int], int] = {}
        self._seen_updates: set[tuple[int, int]] = set()
        self._uid = itertools.count()

    # -- helpers -----------------------------------------------------------

    @property
    def bus(self) -> VirtualBus:
        return self.cluster.bus

    def peers(self) -> list[int]:
        return [r.rid for r in self.cluster.replicas if r.rid != self.rid]

    def last_log(self) -> tuple[int, int]:
        if not self.log:
            return (0, 0)
        return (self.log[-1].term, len(self.log))

    def _reset_election_timer(self) -> None:
        self._timer_epoch += 1
        epoch = self._timer_epoch
        timeout = (
            self.cluster.election_base_s
            + self.priority * self.cluster.election_stagger_s
            + self.bus.rng.uniform(0, 0.005)
        )
        self.bus.schedule(timeout, lambda: self._election_timeout(epoch))

    def _election_timeout(self, epoch: int) -> None:
        if self.crashed or epoch != self._timer_epoch or self.role == "leader":
            return
        self.start_election()

    def start_election(self) -> None:
        if self.crashed:
            return
        self.role = "candidate"
        self.term += 1
        self.voted_for[self.term] = self.rid
        self.votes = {self.rid}
        if len(self.votes) >= self.cluster.majority:
            self._become_leader()
            return
        last_term, last_idx = self.last_log()
        for peer in self.peers():
            self.bus.send(
                self.rid,
                peer,
                lambda p=peer, t=self.term, lt=last_term, li=last_idx: (
                    self.cluster.replica(p).on_request_vote(self.rid, t, lt, li)
                ),
            )
        self._reset_election_timer()

    # -- vote handling -------------------------------------------------------

    def _step_down(self, new_term: int) -> None:
        """Adopt a newer term; fail pending client ops so callers retry."""
        self.term = max(self.term, new_term)
        if self.role != "follower":
            self.role = "follower"
        pending, self._pending = self._pending, []
        for p in pending:
            p.on_done(None)
        self._reset_election_timer()

    def on_request_vote(self, candidate: int, term: int, last_term: int,
                        last_idx: int) -> None:
        if self.crashed:
            return
        if term > self.term:
            self._step_down(term)
        granted = False
        if term == self.term and self.voted_for.get(term) in (None, candidate):
            if (last_term, last_idx) >= self.last_log():
                granted = True
                self.voted_for[term] = candidate
                self._reset_election_timer()
        self.bus.send(
            self.rid,
            candidate,
            lambda: self.cluster.replica(candidate).on_vote(self.rid, term, granted),
        )

    def on_vote(self, voter: int, term: int, granted: bool) -> None:
        if self.crashed or self.role != "candidate" or term != self.term:
            return
        if granted:
            self.votes.add(voter)
            if len(self.votes) >= self.cluster.majority:
                self._become_leader()

    def _become_leader(self) -> None:
        self.role = "leader"
        self.cluster.record_leader(self.term, self.rid)
        self.next_index = {p: len(self.log) for p in self.peers()}
        self.match_index = {p: 0 for p in self.peers()}
        self.last_contact = {p: self.bus.now for p in self.peers()}
        self._broadcast_append()
        self._schedule_heartbeat()

    def _schedule_heartbeat(self) -> None:
        if self.role != "leader" or self.crashed:
            return
        self.bus.schedule(self.cluster.heartbeat_s, self._heartbeat)

    def _heartbeat(self) -> None:
        if self.role != "leader" or self.crashed:
            return
        # check-quorum: a leader that cannot reach a majority steps down so
        # the store reads as leaderless instead of silently stalling writers.
        needed = self.cluster.majority - 1
        if needed > 0:
            threshold = self.bus.now - 3 * self.cluster.election_base_s
            recent = [t for t in self.last_contact.values() if t >= threshold]
            if len(recent) < needed:
                self._step_down(self.term)
                return
        self._broadcast_append()
        self._schedule_heartbeat()

    # -- log replication -------------------------------------------------------

    def client_write(self, kind: str, key: str, value, on_done, op_id: int) -> None:
        """Leader-side entry append; on_done fires once committed.

        Write op ids deduplicate against the log so a client retry after a
        leader change commits at most once.
        """
        if self.crashed or self.role != "leader":
            on_done(None)  # caller retries
            return
        if kind == "w":
            for entry in self.log:
                if entry.op_id == op_id:
                    if entry.index <= self.commit_index:
                        on_done((entry.term, entry.index))
                    else:
                        self._pending.append(
                            _PendingWrite(op_id, entry.index, on_done)
                        )
                    return
        entry = Entry(self.term, len(self.log) + 1, kind, key, value, op_id)
        self.log.append(entry)
        self._pending.append(_PendingWrite(op_id, entry.index, on_done))
        self._broadcast_append()
        self._maybe_advance_commit()

    def _broadcast_append(self) -> None:
        for peer in self.peers():
            self._send_append(peer)

    def _send_append(self, peer: int) -> None:
        ni = self.next_index.get(peer, len(self.log))
        prev_term = self.log[ni - 1].term if ni > 0 else 0
        entries = self.log[ni:]
        self.bus.send(
            self.rid,
            peer,
            lambda p=peer, t=self.term, pi=ni, pt=prev_term, es=list(entries), ci=self.commit_index: (
                self.cluster.replica(p).on_append(self.rid, t, pi, pt, es, ci)
            ),
        )

    def on_append(self, leader: int, term: int, prev_len: int, prev_term: int,
                  entries: list[Entry], leader_commit: int) -> None:
        if self.crashed:
            return
        if term < self.term:
            self._ack_append(leader, False, 0)
            return
        if term > self.term or self.role != "follower":
            self._step_down(term)
        self._reset_election_timer()
        if len(self.log) < prev_len or (
            prev_len > 0 and self.log[prev_len - 1].term != prev_term
        ):
            self._ack_append(leader, False, 0)
            return
        # append/overwrite from prev_len
        self.log = self.log[:prev_len] + list(entries)
        if leader_commit > self.commit_index:
            self.commit_index = min(leader_commit, len(self.log))
            self._apply_committed()
        self._ack_append(leader, True, len(self.log))

    def _ack_append(self, leader: int, ok: bool, match: int) -> None:
        self.bus.send(
            self.rid,
            leader,
            lambda: self.cluster.replica(leader).on_append_ack(self.rid, self.term,
                                                               ok, match),
        )

    def on_append_ack(self, peer: int, term: int, ok: bool, match: int) -> None:
        if self.crashed or self.role != "leader":
            return
        self.last_contact[peer] = self.bus.now
        if term > self.term:
            self._step_down(term)
            return
        if ok:
            self.match_index[peer] = max(self.match_index.get(peer, 0), match)
            self.next_index[peer] = self.match_index[peer]
            self._maybe_advance_commit()
        else:
            self.next_index[peer] = max(0, self.next_index.get(peer, 1) - 1)
            self._send_append(peer)

    def _maybe_advance_commit(self) -> None:
        for n in range(len(self.log), self.commit_index, -1):
            if self.log[n - 1].term != self.term:
                continue
            votes = 1 + sum(
                1 for p in self.peers() if self.match_index.get(p, 0) >= n
            )
            if votes >= self.cluster.majority:
                self.commit_index = n
                break
        self._apply_committed()

    def _apply_committed(self) -> None:
        """Apply entries in order; read results capture kv at their position."""
        while self.applied < self.commit_index:
            entry = self.log[self.applied]
            if entry.kind == "w":
                self.kv[entry.key] = entry.value
                result = (entry.term, entry.index)
            else:
                result = ("value", self.kv.get(entry.key))
            self.applied += 1
            done = [p for p in self._pending if p.entry_index == self.applied]
            if done:
                self._pending = [
                    p for p in self._pending if p.entry_index != self.applied
                ]
                for p in done:
                    p.on_done(result)

    # -- adaptive shard handling ------------------------------------------------

    def adaptive_write(self, shard: Shard, key: str, value, on_done,
                       deadline_s: float) -> None:
        if self.crashed:
            on_done(StoreUnavailableError("replica crashed"))
            return
        queue = self.blocked.setdefault(shard.shard_id, [])
        queue.append((key, value, on_done))
        self.bus.schedule(
            deadline_s, lambda item=queue[-1]: self._expire_blocked(shard, item)
        )
        self._drain_blocked(shard)

    def _expire_blocked(self, shard: Shard, item) -> None:
        queue = self.blocked.get(shard.shard_id, [])
        if item in queue:
            queue.remove(item)
            item[2](SyncTimeoutError(
                f"shard {shard.shard_id}: propagation stalled past deadline"
            ))

    def _drain_blocked(self, shard: Shard) -> None:
        queue = self.blocked.get(shard.shard_id, [])
        pending = self.pending_updates.setdefault(shard.shard_id, {})
        limit = max(shard.k, 1)
        while queue and len(pending) < limit:
            key, value, on_done = queue.pop(0)
            self._apply_adaptive(shard, key, value, on_done)

    def _apply_adaptive(self, shard: Shard, key: str, value, on_done) -> None:
        self.lamport += 1
        stamp = (self.lamport, self.rid)
        self._adaptive_put(shard, key, stamp, value, origin=self.rid)
        uid = next(self._uid)
        msg = {
            "uid": uid,
            "shard": shard.shard_id,
            "key": key,
            "stamp": stamp,
            "value": value,
            "origin": self.rid,
            "acks": set(),
            "on_done": on_done if shard.k == 0 else None,
        }
        self.pending_updates[shard.shard_id][uid] = msg
        self._propagate(shard, msg)
        self.bus.schedule(
            self.cluster.retransmit_s, lambda: self._retransmit(shard, uid)
        )
        if shard.k > 0:
            on_done((stamp, "applied"))
        else:
            # synchronous semantics: the caller must not wait forever if a
            # peer never acknowledges
            def expire():
                live = self.pending_updates.get(shard.shard_id, {}).get(uid)
                if live is not None and live["on_done"] is not None:
                    cb = live["on_done"]
                    live["on_done"] = None
                    cb(SyncTimeoutError(
                        f"shard {shard.shard_id}: sync write not acknowledged"
                    ))

            self.bus.schedule(self.cluster.sync_deadline_s, expire)

    def _adaptive_put(self, shard: Shard, key, stamp, value, origin) -> None:
        cur = self.adaptive_kv.get(key)
        if cur is None or stamp > cur[0]:
            self.adaptive_kv[key] = (stamp, value)
        self.lamport = max(self.lamport, stamp[0])
        count_key = (shard.shard_id, origin)
        self.applied_counts[count_key] = self.applied_counts.get(count_key, 0) + 1

    def _propagate(self, shard: Shard, msg: dict) -> None:
        for peer in self.peers():
            if peer in msg["acks"]:
                continue
            self.bus.send(
                self.rid,
                peer,
                lambda p=peer, m=dict(msg): self.cluster.replica(p).on_update(m),
            )

    def _retransmit(self, shard: Shard, uid: int) -> None:
        if self.crashed:
            return
        msg = self.pending_updates.get(shard.shard_id, {}).get(uid)
        if msg is None:
            return
        self._propagate(shard, msg)
        self.bus.schedule(
            self.cluster.retransmit_s, lambda: self._retransmit(shard, uid)
        )

    def on_update(self, msg: dict) -> None:
        if self.crashed:
            return
        shard = self.cluster.shard_by_id(msg["shard"])
        key = (msg["origin"], msg["uid"])
        if key not in self._seen_updates:
            self._seen_updates.add(key)
            self._adaptive_put(shard, msg["key"], tuple(msg["stamp"]), msg["value"],
                               origin=msg["origin"])
        self.bus.send(
            self.rid,
            msg["origin"],
            lambda: self.cluster.replica(msg["origin"]).on_update_ack(
                msg["shard"], msg["uid"], self.rid
            ),
        )

    def on_update_ack(self, shard_id: str, uid: int, peer: int) -> None:
        if self.crashed:
            return
        msg = self.pending_updates.get(shard_id, {}).get(uid)
        if msg is None:
            return
        msg["acks"].add(peer)
        if set(self.peers()) <= msg["acks"]:
            del self.pending_updates[shard_id][uid]
            if msg["on_done"] is not None:
                msg["on_done"]((tuple(msg["stamp"]), "synced"))
            self._drain_blocked(self.cluster.shard_by_id(shard_id))


class Cluster:
    """Replica set over a fault-injectable virtual bus."""

    def __init__(
        self,
        shards: list[Shard] | None = None,
        n: int = 3,
        seed: int = 0,
        priorities: list[int] | None = None,
        base_delay_s: float = 0.001,
    ):
        self.bus = VirtualBus(seed=seed, base_delay_s=base_delay_s)
        self.shards = shards or [
            Shard("registry", "strong", prefix=""),
        ]
        self.replicas = [
            Replica(self, rid, (priorities or list(range(n)))[rid])
            for rid in range(n)
        ]
        self.majority = n // 2 + 1
        self.heartbeat_s = 0.02
        self.election_base_s = 0.08
        self.election_stagger_s = 0.05
        self.retransmit_s = 0.05
        self.write_timeout_s = 1.0
        self.sync_deadline_s = 2.0
        self.history: list[HistOp] = []
        self.leaders_by_term: dict[int, int] = {}
        self._op_ids = itertools.count(1)
        for r in self.replicas:
            r._reset_election_timer()

    def record_leader(self, term: int, rid: int) -> None:
        existing = self.leaders_by_term.get(term)
        if existing is not None and existing != rid:
            raise AssertionError(
                f"two leaders in term {term}: {existing} and {rid}"
            )
        self.leaders_by_term[term] = rid

    # -- lookups ----------------------------------------------------------

    def replica(self, rid: int) -> Replica:
        return self.replicas[rid]

    def shard_for(self, key: str) -> Shard:
        matches = [s for s in self.shards if key.startswith(s.prefix)]
        if not matches:
            raise WindctlError(f"no shard owns key {key!r}")
        return max(matches, key=lambda s: len(s.prefix))

    def shard_by_id(self, shard_id: str) -> Shard:
        for s in self.shards:
            if s.shard_id == shard_id:
                return s
        raise WindctlError(f"unknown shard {shard_id!r}")

    def current_leader(self) -> int | None:
        leaders = [
            r for r in self.replicas if r.role == "leader" and not r.crashed
        ]
        if not leaders:
            return None
        return max(leaders, key=lambda r: r.term).rid

    # -- fault and membership control ------------------------------------------

    def crash(self, rid: int) -> None:
        self.replicas[rid].crashed = True

    def recover(self, rid: int) -> None:
        r = self.replicas[rid]
        r.crashed = False
        r.role = "follower"
        r._reset_election_timer()

    def elect_leader(self, rid: int) -> None:
        """Force an election attempt by the given replica now."""
        self.replicas[rid].start_election()

    def add_fault(self, fault: BusFault) -> None:
        if fault.kind == "partition":
            flat = [x for g in fault.groups for x in g]
            if len(flat) != len(set(flat)):
                raise WindctlError("partition sets must be disjoint")
        self.bus.faults.append(fault)

    # -- client operations -------------------------------------------------------

    def write_strong(self, key: str, value, on_done) -> int:
        shard = self.shard_for(key)
        if shard.mode != "strong":
            raise WindctlError(f"key {key!r} is not in a strong shard")
        return self._strong_op("w", key, value, on_done)

    def read_strong(self, key: str, on_done) -> int:
        shard = self.shard_for(key)
        if shard.mode != "strong":
            raise WindctlError(f"key {key!r} is not in a strong shard")
        return self._strong_op("r", key, None, on_done)

    def _strong_op(self, kind: str, key: str, value, on_done) -> int:
        op_id = next(self._op_ids)
        invoke = self.bus.now
        state = {"done": False}

        def finish(result) -> None:
            if state["done"]:
                return
            state["done"] = True
            if isinstance(result, Exception):
                status, recorded = "maybe", None
                on_done(result)
            else:
                status, recorded = "ok", result
                on_done(result)
            self.history.append(
                HistOp(
                    op_id=op_id,
                    kind=kind,
                    value=value if kind == "w" else (
                        recorded[1] if recorded else None
                    ),
                    invoke=invoke,
                    respond=self.bus.now if status == "ok" else None,
                    status=status,
                )
            )

        def attempt() -> None:
            if state["done"] or self.bus.now - invoke > self.write_timeout_s:
                return
            leader = self.current_leader()
            if leader is None:
                self.bus.schedule(0.02, attempt)
                return
            self.replicas[leader].client_write(
                kind, key, value,
                lambda result: (
                    self.bus.schedule(0.02, attempt)
                    if result is None
                    else finish(result)
                ),
                op_id,
            )

        self.bus.schedule(0.0005, attempt)
        self.bus.schedule(
            self.write_timeout_s,
            lambda: finish(StoreUnavailableError("no majority acknowledged in time"))
            if not state["done"]
            else None,
        )
        return op_id

    def write_adaptive(self, key: str, value, on_done, origin: int = 0) -> None:
        shard = self.shard_for(key)
        if shard.mode != "adaptive":
            raise WindctlError(f"key {key!r} is not in an adaptive shard")
        self.replicas[origin].adaptive_write(
            shard, key, value, on_done, self.sync_deadline_s
        )

    def read_local(self, key: str, rid: int = 0):
        entry = self.replicas[rid].adaptive_kv.get(key)
        return None if entry is None else entry[1]

    # -- invariant probes -----------------------------------------------------

    def committed_logs(self) -> list[list[Entry]]:
        return [r.log[: r.commit_index] for r in self.replicas]

    def assert_prefix_consistent(self) -> None:
        logs = self.committed_logs()
        for i, a in enumerate(logs):
            for b in logs[i + 1:]:
                short, long_ = (a, b) if len(a) <= len(b) else (b, a)
                for x, y in zip(short, long_):
                    if (x.term, x.index, x.kind, x.key, x.value) != (
                        y.term, y.index, y.kind, y.key, y.value
                    ):
                        raise AssertionError("committed logs diverge")

    def adaptive_lag(self, shard_id: str) -> int:
        """Max per-origin applied-update lag between any two replicas."""
        worst = 0
        for origin in range(len(self.replicas)):
            counts = [
                r.applied_counts.get((shard_id, origin), 0) for r in self.replicas
            ]
            worst = max(worst, max(counts) - min(counts))
        return worst

    def adaptive_states(self) -> list[dict]:
        return [dict(r.adaptive_kv) for r in self.replicas]

    def run_for(self, seconds: float) -> None:
        self.bus.run_until(self.bus.now + seconds)

    def settle(self, max_time: float = 60.0) -> None:
        """Drive the bus until client-visible work has drained.

        Heartbeat and election timers reschedule themselves forever, so
        plain quiescence never happens; instead run in heartbeat-sized slices
        until no client op, pending update or unapplied entry remains.
        """
        deadline = self.bus.now + max_time
        stable = 0
        while self.bus.now < deadline and stable < 3:
            self.bus.run_until(self.bus.now + self.heartbeat_s * 2)
            busy = any(
                r._pending or any(r.pending_updates.get(s.shard_id) for s in self.shards)
                or any(r.blocked.get(s.shard_id) for s in self.shards)
                for r in self.replicas
            )
            stable = 0 if busy else stable + 1


class SyncStore:
    """Synchronous facade over a private, fault-free cluster.

    Controller modules persist through this; every call drives the bus until
    the operation settles, so callers see ordinary blocking semantics.
    """

    def __init__(self, n: int = 3, seed: int = 0):
        self.cluster = Cluster(
            shards=[
                Shard("monitoring", "adaptive", prefix="kpi:", k=3),
                Shard("registry", "strong", prefix=""),
            ],
            n=n,
            seed=seed,
        )
        # give the cluster time to elect its first leader
        self.cluster.run_for(1.0)

    def put(self, key: str, value) -> tuple[int, int]:
        out: list = []
        self.cluster.write_strong(key, value, out.append)
        self._wait(out)
        return out[0]

    def get(self, key: str):
        out: list = []
        self.cluster.read_strong(key, out.append)
        self._wait(out)
        return out[0][1]

    def put_kpi(self, key: str, value) -> None:
        out: list = []
        self.cluster.write_adaptive(key, value, out.append)
        self._wait(out)

    def get_kpi(self, key: str):
        return self.cluster.read_local(key)

    def _wait(self, out: list) -> None:
        deadline = self.cluster.bus.now + 30.0
        while not out and self.cluster.bus.now < deadline:
            self.cluster.run_for(0.05)
        if not out:
            raise StoreUnavailableError("store did not settle")
        if isinstance(out[0], Exception):
            raise out[0]

    def keys(self, prefix: str = "") -> list[str]:
        leader = self.cluster.current_leader()
        kv = self.cluster.replicas[leader].kv if leader is not None else {}
        return sorted(k for k in kv if k.startswith(prefix))
