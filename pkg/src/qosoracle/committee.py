"""Raft-lite committee of trusted nodes.

The replicated log only carries fragment-verification records (plus no-op
and "package emitted" markers). The leader verifies each submitted partial
signature, appends it, and followers re-verify before acknowledging. Once a
strict majority holds an entry it is committed and applied; whenever the
committed valid fragments for one message digest reach the task threshold,
the leader aggregates them, signs the package and hands it to the contract.

Nodes are crash-only. All transitions are synchronous and driven from
outside: a network object delivers messages and fires timers. Anything
with ``send(src, dst, data, now)`` and ``set_timer(node, kind, gen, at)``
works; :class:`LocalNetwork` is a minimal standalone one.
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
from dataclasses import dataclass, field
from enum import Enum

from . import crypto, wire
from .wire import Tag

MAX_BATCH = 64


class CommitteeError(Exception):
    pass


class UnknownTaskError(CommitteeError, KeyError):
    pass


class Role(str, Enum):
    FOLLOWER = "follower"
    CANDIDATE = "candidate"
    LEADER = "leader"


@dataclass
class LogEntry:
    term: int
    kind: str  # "fragment", "noop" or "emitted"
    task_id: str = ""
    signer: int = 0
    sigma: int = 0
    digest: int = 0
    msg: bytes = b""
    valid: bool = False
    receipt_ms: float = 0.0

    @property
    def key(self):
        return (self.task_id, self.signer)

    def psig(self) -> crypto.PartialSignature:
        return crypto.PartialSignature(self.signer, self.sigma, self.digest)

    def to_bytes(self) -> bytes:
        return wire.pack_record(Tag.LOG_ENTRY, self.term, self.kind, self.task_id, self.signer,
                                self.sigma, self.digest, self.msg, self.valid,
                                float(self.receipt_ms))

    @classmethod
    def from_bytes(cls, data):
        _, f = wire.unpack_record(data, Tag.LOG_ENTRY)
        return cls(*f)


@dataclass
class CommitteePackage:
    """``S = (group signature, raw data, signer -> response time)`` plus the
    leader's signature over the encoded ``S``."""

    task_id: str
    group_signature: crypto.GroupSignature
    msg: bytes
    response_times: dict
    leader_id: int
    term: int
    leader_signature: int = 0

    def body_bytes(self) -> bytes:
        times = [[i, float(self.response_times[i])] for i in sorted(self.response_times)]
        return wire.pack_record(Tag.PACKAGE_BODY, self.task_id, self.group_signature.sigma,
                                list(self.group_signature.signers), self.msg, times)

    def to_bytes(self) -> bytes:
        return wire.pack_record(Tag.PACKAGE, self.body_bytes(), self.leader_id, self.term,
                                self.leader_signature)

    @classmethod
    def from_bytes(cls, data):
        _, (body, leader_id, term, sig) = wire.unpack_record(data, Tag.PACKAGE)
        _, (task_id, sigma, signers, msg, times) = wire.unpack_record(body, Tag.PACKAGE_BODY)
        return cls(task_id, crypto.GroupSignature(sigma, tuple(signers)), msg,
                   {i: t for i, t in times}, leader_id, term, sig)


def encode_fragment(task_id, psig: crypto.PartialSignature, msg: bytes) -> bytes:
    return wire.pack_record(Tag.FRAGMENT_SUBMIT, task_id, psig.to_bytes(), msg)


def decode_fragment(data):
    _, (task_id, psig, msg) = wire.unpack_record(data, Tag.FRAGMENT_SUBMIT)
    return task_id, crypto.PartialSignature.from_bytes(psig), msg


def msg_digest(msg: bytes) -> str:
    return hashlib.sha256(msg).hexdigest()


@dataclass
class TaskInfo:
    task_id: str
    params: crypto.SchemeParams
    group_key: crypto.GroupKey
    public_shares: dict
    threshold: int
    registered_ms: float


@dataclass
class Submission:
    task_id: str
    psig: crypto.PartialSignature
    msg: bytes
    receipt_ms: float


@dataclass
class CommitteeNode:
    id: int
    leader_key: crypto.LeaderKey
    role: Role = Role.FOLLOWER
    term: int = 0
    voted_for: int | None = None
    log: list = field(default_factory=list)
    commit_index: int = 0  # entries log[:commit_index] are committed
    last_applied: int = 0
    up: bool = True
    leader_id: int | None = None
    votes: set = field(default_factory=set)
    next_index: dict = field(default_factory=dict)
    match_index: dict = field(default_factory=dict)
    election_gen: int = 0
    election_deadline: float | None = None
    timer_pending: bool = False
    heartbeat_gen: int = 0
    log_keys: set = field(default_factory=set)
    # applied state
    fragments: dict = field(default_factory=dict)  # task -> digest -> {signer: (pos, entry)}
    emitted: set = field(default_factory=set)
    sessions: dict = field(default_factory=dict)  # per-node one-time aggregation guard

    @property
    def last_term(self):
        return self.log[-1].term if self.log else 0


class Committee:
    def __init__(self, size, net, rng, params: crypto.SchemeParams, *,
                 election_timeout_ms=(150.0, 300.0), heartbeat_ms=50.0,
                 on_package=None, trace=None, key_seed=b"committee"):
        if size < 1:
            raise CommitteeError("committee needs at least one node")
        self.size = size
        self.net = net
        self.rng = rng
        self.params = params.with_threshold(1, 1)
        self.election_timeout_ms = tuple(election_timeout_ms)
        self.heartbeat_ms = heartbeat_ms
        self.on_package = on_package or (lambda pkg, now: None)
        self._trace = trace or (lambda rec: None)
        self.nodes = [
            CommitteeNode(i, crypto.leader_keygen(key_seed + b"/%d" % i, self.params))
            for i in range(size)
        ]
        self.tasks = {}
        self.inbox = {}
        self.emitted = {}
        self.late = []

    # -- public surface ---------------------------------------------------

    def public_keys(self) -> dict:
        return {n.id: n.leader_key.public for n in self.nodes}

    def start(self, now=0.0):
        for node in self.nodes:
            self._reset_election_timer(node, now)

    def leader(self) -> CommitteeNode | None:
        live = [n for n in self.nodes if n.up and n.role is Role.LEADER]
        return max(live, key=lambda n: n.term) if live else None

    def register_task(self, task_id, params, group_key, public_shares, threshold, now):
        info = TaskInfo(task_id, params, group_key, dict(public_shares), threshold, now)
        self.tasks[task_id] = info
        for node in self.nodes:
            node.sessions[task_id] = crypto.SigningSession(params, group_key, dict(public_shares))

    def submit_fragment(self, task_id, psig, msg, now) -> str:
        """Hand a fragment to the committee.

        Returns one of ``accepted``, ``rejected`` (logged as invalid),
        ``queued`` (no live leader yet), ``duplicate`` or ``late``.
        """
        if task_id not in self.tasks:
            raise UnknownTaskError(task_id)
        key = (task_id, psig.index)
        if task_id in self.emitted:
            self.late.append((task_id, psig.index, now))
            self.trace(now, "late_fragment", task=task_id, signer=psig.index)
            return "late"
        if key in self.inbox or any(key in n.log_keys for n in self.nodes if n.up):
            return "duplicate"
        sub = Submission(task_id, psig, msg, now)
        self.inbox[key] = sub
        leader = self.leader()
        if leader is None:
            self.trace(now, "fragment_queued", task=task_id, signer=psig.index)
            return "queued"
        entry = self._propose(leader, sub, now)
        return "accepted" if entry.valid else "rejected"

    def submit_bytes(self, data, now) -> str:
        task_id, psig, msg = decode_fragment(data)
        return self.submit_fragment(task_id, psig, msg, now)

    def crash(self, node_id, now):
        node = self.nodes[node_id]
        node.up = False
        node.role = Role.FOLLOWER
        node.votes = set()
        self._disarm_election_timer(node)
        node.heartbeat_gen += 1
        self.trace(now, "crash", node=node_id, term=node.term)

    def recover(self, node_id, now):
        node = self.nodes[node_id]
        if node.up:
            return
        node.up = True
        node.leader_id = None
        self.trace(now, "recover", node=node_id, term=node.term)
        self._reset_election_timer(node, now)

    def deliver(self, dst, data, now):
        node = self.nodes[dst]
        if not node.up:
            return
        tag, fields = wire.unpack_record(data)
        if tag == Tag.VOTE_REQUEST:
            self._on_vote_request(node, *fields, now=now)
        elif tag == Tag.VOTE_RESPONSE:
            self._on_vote_response(node, *fields, now=now)
        elif tag == Tag.APPEND_ENTRIES:
            self._on_append(node, *fields, now=now)
        elif tag == Tag.APPEND_RESPONSE:
            self._on_append_response(node, *fields, now=now)
        else:
            raise CommitteeError(f"unexpected message tag 0x{tag:02x}")

    def on_timer(self, node_id, kind, gen, now):
        node = self.nodes[node_id]
        if not node.up:
            return
        if kind == "election" and gen == node.election_gen:
            node.timer_pending = False
            if node.role is Role.LEADER or node.election_deadline is None:
                return
            if now < node.election_deadline:
                self._arm(node)
            else:
                self._start_election(node, now)
        elif kind == "heartbeat" and gen == node.heartbeat_gen and node.role is Role.LEADER:
            self._broadcast_append(node, now)
            self._schedule_heartbeat(node, now)

    def try_aggregate(self, task_id, now, node=None) -> CommitteePackage | None:
        """Build a package if one digest group holds enough committed fragments.

        Returns ``None`` when no group reaches the threshold. Must run on the
        current leader.
        """
        node = node or self.leader()
        if node is None or node.role is not Role.LEADER:
            return None
        if task_id in node.emitted or task_id in self.emitted:
            return None
        info = self.tasks[task_id]
        groups = node.fragments.get(task_id, {})
        ready = []
        for digest, members in groups.items():
            if len(members) >= info.threshold:
                # position of the threshold-th fragment decides which group completed first
                positions = sorted(pos for pos, _ in members.values())
                ready.append((positions[info.threshold - 1], digest))
        if not ready:
            return None
        _, digest = min(ready)
        members = groups[digest]
        session = node.sessions[task_id]
        sig = session.aggregate(entry.psig() for _, entry in members.values())
        any_entry = next(iter(members.values()))[1]
        times = {i: members[i][1].receipt_ms - info.registered_ms for i in sig.signers}
        pkg = CommitteePackage(task_id, sig, any_entry.msg, times, node.id, node.term)
        pkg.leader_signature = crypto.leader_sign(pkg.body_bytes(), node.leader_key, self.params)
        return pkg

    def trace(self, now, event, **fields):
        rec = {"t": round(float(now), 6), "ev": event}
        rec.update(fields)
        self._trace(rec)

    # -- elections --------------------------------------------------------

    def _reset_election_timer(self, node, now):
        # one outstanding timer event per node; a reset only moves the deadline
        lo, hi = self.election_timeout_ms
        node.election_deadline = now + self.rng.uniform(lo, hi)
        if not node.timer_pending:
            self._arm(node)

    def _arm(self, node):
        node.timer_pending = True
        self.net.set_timer(node.id, "election", node.election_gen, node.election_deadline)

    def _disarm_election_timer(self, node):
        node.election_gen += 1
        node.election_deadline = None
        node.timer_pending = False

    def _schedule_heartbeat(self, node, now):
        self.net.set_timer(node.id, "heartbeat", node.heartbeat_gen, now + self.heartbeat_ms)

    def _step_down(self, node, term, now):
        was_leader = node.role is Role.LEADER
        if term > node.term:
            node.term = term
            node.voted_for = None
        node.role = Role.FOLLOWER
        node.votes = set()
        if was_leader:
            node.heartbeat_gen += 1
            self._reset_election_timer(node, now)

    def _start_election(self, node, now):
        node.term += 1
        node.role = Role.CANDIDATE
        node.voted_for = node.id
        node.votes = {node.id}
        node.leader_id = None
        self.trace(now, "election_start", node=node.id, term=node.term)
        self._reset_election_timer(node, now)
        if 2 * len(node.votes) > self.size:
            self._become_leader(node, now)
            return
        msg = wire.pack_record(Tag.VOTE_REQUEST, node.term, node.id, len(node.log), node.last_term)
        for peer in self.nodes:
            if peer.id != node.id:
                self.net.send(node.id, peer.id, msg, now)

    def _on_vote_request(self, node, term, candidate, last_index, last_term, now):
        if term > node.term:
            self._step_down(node, term, now)
        up_to_date = (last_term, last_index) >= (node.last_term, len(node.log))
        granted = (term == node.term and node.voted_for in (None, candidate) and up_to_date)
        if granted:
            node.voted_for = candidate
            self._reset_election_timer(node, now)
        self.trace(now, "vote", node=node.id, candidate=candidate, term=term, granted=granted)
        reply = wire.pack_record(Tag.VOTE_RESPONSE, node.term, node.id, granted)
        self.net.send(node.id, candidate, reply, now)

    def _on_vote_response(self, node, term, voter, granted, now):
        if term > node.term:
            self._step_down(node, term, now)
            return
        if node.role is not Role.CANDIDATE or term != node.term or not granted:
            return
        node.votes.add(voter)
        if 2 * len(node.votes) > self.size:
            self._become_leader(node, now)

    def _become_leader(self, node, now):
        node.role = Role.LEADER
        node.leader_id = node.id
        self._disarm_election_timer(node)  # leaders do not time out
        node.heartbeat_gen += 1
        for peer in self.nodes:
            node.next_index[peer.id] = len(node.log) + 1
            node.match_index[peer.id] = 0
        self.trace(now, "leader", node=node.id, term=node.term)
        # a no-op from the new term lets earlier-term entries commit
        self._append_local(node, LogEntry(node.term, "noop"), now)
        for key in sorted(self.inbox):
            if key not in node.log_keys:
                self._append_local(node, self._make_entry(node, self.inbox[key]), now)
        self._broadcast_append(node, now)
        self._schedule_heartbeat(node, now)
        self._advance_commit(node, now)

    # -- replication ------------------------------------------------------

    def _make_entry(self, node, sub: Submission) -> LogEntry:
        info = self.tasks[sub.task_id]
        pk_i = info.public_shares.get(sub.psig.index)
        valid = pk_i is not None and crypto.verify_partial(sub.psig, pk_i, sub.msg, info.params)
        return LogEntry(node.term, "fragment", sub.task_id, sub.psig.index, sub.psig.sigma,
                        sub.psig.digest, sub.msg, valid, sub.receipt_ms)

    def _append_local(self, node, entry, now):
        node.log.append(entry)
        node.match_index[node.id] = len(node.log)
        if entry.kind == "fragment":
            node.log_keys.add(entry.key)
            self.trace(now, "append", node=node.id, term=node.term, index=len(node.log),
                       task=entry.task_id, signer=entry.signer, valid=entry.valid)
            if not entry.valid:
                self.trace(now, "fragment_rejected", task=entry.task_id, signer=entry.signer)

    def _propose(self, node, sub, now):
        entry = self._make_entry(node, sub)
        self._append_local(node, entry, now)
        self._broadcast_append(node, now)
        self._advance_commit(node, now)
        return entry

    def _send_append(self, node, peer_id, now):
        nxt = node.next_index[peer_id]
        prev_index = nxt - 1
        prev_term = node.log[prev_index - 1].term if prev_index > 0 else 0
        batch = node.log[prev_index : prev_index + MAX_BATCH]
        msg = wire.pack_record(Tag.APPEND_ENTRIES, node.term, node.id, prev_index, prev_term,
                               [e.to_bytes() for e in batch], node.commit_index)
        node.next_index[peer_id] = prev_index + len(batch) + 1
        self.net.send(node.id, peer_id, msg, now)

    def _broadcast_append(self, node, now):
        for peer in self.nodes:
            if peer.id != node.id:
                self._send_append(node, peer.id, now)

    def _on_append(self, node, term, leader, prev_index, prev_term, raw_entries, leader_commit, now):
        def reply(success, match, hint=0):
            data = wire.pack_record(Tag.APPEND_RESPONSE, node.term, node.id, success, match, hint)
            self.net.send(node.id, leader, data, now)

        if term < node.term:
            reply(False, 0, len(node.log))
            return
        if term > node.term or node.role is not Role.FOLLOWER:
            self._step_down(node, term, now)
        node.leader_id = leader
        self._reset_election_timer(node, now)

        if prev_index > len(node.log) or (prev_index > 0 and node.log[prev_index - 1].term != prev_term):
            reply(False, 0, min(len(node.log), prev_index - 1))
            return

        entries = [LogEntry.from_bytes(b) for b in raw_entries]
        for e in entries:
            if e.kind != "fragment":
                continue
            info = self.tasks.get(e.task_id)
            pk_i = info.public_shares.get(e.signer) if info else None
            mine = pk_i is not None and crypto.verify_partial(e.psig(), pk_i, e.msg, info.params)
            if mine != e.valid:
                self.trace(now, "verdict_mismatch", node=node.id, task=e.task_id, signer=e.signer)
                reply(False, 0, prev_index)
                return

        pos = prev_index
        truncated = False
        for e in entries:
            if pos < len(node.log):
                if node.log[pos].term == e.term:
                    pos += 1
                    continue
                del node.log[pos:]
                truncated = True
            node.log.append(e)
            pos += 1
        if truncated:
            node.log_keys = {x.key for x in node.log if x.kind == "fragment"}
        else:
            node.log_keys.update(e.key for e in entries if e.kind == "fragment")
        match = prev_index + len(entries)
        if leader_commit > node.commit_index:
            node.commit_index = min(leader_commit, match)
            self._apply(node, now)
        reply(True, match)

    def _on_append_response(self, node, term, follower, success, match, hint, now):
        if term > node.term:
            self._step_down(node, term, now)
            return
        if node.role is not Role.LEADER or term != node.term:
            return
        if success:
            if match > node.match_index[follower]:
                node.match_index[follower] = match
            node.next_index[follower] = max(node.next_index[follower], match + 1)
            self._advance_commit(node, now)
            if node.role is Role.LEADER and node.next_index[follower] <= len(node.log):
                self._send_append(node, follower, now)
        else:
            node.next_index[follower] = max(1, min(node.next_index[follower] - 1, hint + 1))
            self._send_append(node, follower, now)

    def _advance_commit(self, node, now):
        for idx in range(len(node.log), node.commit_index, -1):
            if node.log[idx - 1].term != node.term:
                break
            acks = sum(1 for peer in self.nodes if node.match_index.get(peer.id, 0) >= idx)
            if 2 * acks > self.size:
                node.commit_index = idx
                break
        touched = self._apply(node, now)
        for task_id in sorted(touched):
            self._maybe_emit(node, task_id, now)

    def _apply(self, node, now) -> set:
        touched = set()
        while node.last_applied < node.commit_index:
            pos = node.last_applied
            e = node.log[pos]
            node.last_applied += 1
            if e.kind == "fragment":
                self.inbox.pop(e.key, None)
                if node.role is Role.LEADER:
                    self.trace(now, "commit", node=node.id, term=node.term, index=pos + 1,
                               task=e.task_id, signer=e.signer, valid=e.valid)
                if e.valid:
                    group = node.fragments.setdefault(e.task_id, {}).setdefault(msg_digest(e.msg), {})
                    group.setdefault(e.signer, (pos, e))
                    touched.add(e.task_id)
            elif e.kind == "emitted":
                node.emitted.add(e.task_id)
            elif e.kind == "noop" and node.role is Role.LEADER:
                touched.update(t for t in node.fragments if t not in node.emitted)
        return touched

    def _maybe_emit(self, node, task_id, now):
        if node.role is not Role.LEADER or task_id in self.emitted:
            return
        pkg = self.try_aggregate(task_id, now, node)
        if pkg is None:
            return
        self.emitted[task_id] = pkg
        self.trace(now, "package", node=node.id, term=node.term, task=task_id,
                   signers=list(pkg.group_signature.signers))
        self._append_local(node, LogEntry(node.term, "emitted", task_id), now)
        self._broadcast_append(node, now)
        self.on_package(pkg, now)


def election_violations(records) -> dict:
    """Terms that saw more than one leader, from a committee trace."""
    leaders = {}
    for rec in records:
        if rec.get("ev") == "leader":
            leaders.setdefault(rec["term"], set()).add(rec["node"])
    return {term: sorted(ids) for term, ids in leaders.items() if len(ids) > 1}


class LocalNetwork:
    """Tiny standalone event loop with a fixed message delay."""

    def __init__(self, delay_ms=1.0):
        self.delay_ms = delay_ms
        self.committee = None
        self.now = 0.0
        self._queue = []
        self._seq = itertools.count()
        self.down_links = set()

    def attach(self, committee):
        self.committee = committee

    def send(self, src, dst, data, now):
        heapq.heappush(self._queue, (now + self.delay_ms, next(self._seq), "msg", (src, dst, data)))

    def set_timer(self, node, kind, gen, at):
        heapq.heappush(self._queue, (at, next(self._seq), "timer", (node, kind, gen)))

    def call_at(self, at, fn):
        heapq.heappush(self._queue, (at, next(self._seq), "call", fn))

    def run_until(self, until):
        while self._queue and self._queue[0][0] <= until:
            at, _, kind, payload = heapq.heappop(self._queue)
            self.now = at
            if kind == "msg":
                self.committee.deliver(payload[1], payload[2], at)
            elif kind == "timer":
                self.committee.on_timer(*payload, now=at)
            else:
                payload(at)
        self.now = max(self.now, until)
