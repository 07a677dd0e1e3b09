"""Deterministic discrete-event simulation of the oracle pipeline.

One virtual clock in milliseconds drives everything: task dispatch, node
fetch latencies, fragment delivery, committee messages and timers, package
settlement and deadlines. Events are processed in (time, insertion order),
so a run is fully determined by its scenario and seed.

A fetch reads the source value at the moment it *completes*; two fetches
agree exactly when they finish inside the same source period.
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import crypto, kernels
from .committee import Committee, CommitteePackage, election_violations, encode_fragment
from .contract import STRATEGIES, OracleContract, QosParams, RejectedPackageError, SubtaskState

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid scenario: " + "; ".join(self.problems))


class EventKind(str, Enum):
    TASK_DISPATCH = "TaskDispatch"
    FETCH_COMPLETE = "FetchComplete"
    FRAGMENT_ARRIVE = "FragmentArrive"
    COMMITTEE_MSG = "CommitteeMsg"
    DEADLINE = "Deadline"
    NODE_CRASH = "NodeCrash"
    NODE_RECOVER = "NodeRecover"


@dataclass(order=True)
class SimEvent:
    time: float
    seq: int
    kind: EventKind = field(compare=False)
    payload: tuple = field(compare=False, default=())
    work: bool = field(compare=False, default=False)  # counts toward quiescence


@dataclass
class NodeProfile:
    id: str
    latency: dict  # source id -> (mu, sigma) in ms
    down: list = field(default_factory=list)  # [start, end) intervals

    def is_up(self, t) -> bool:
        return not any(a <= t < b for a, b in self.down)


@dataclass
class DataSource:
    id: str
    period_ms: float | None = None  # None: the value never changes

    def value(self, clock) -> int:
        if self.period_ms is None or not math.isfinite(self.period_ms):
            return 0
        return math.floor(clock / self.period_ms)


@dataclass
class CrashSpec:
    node: object  # committee index or "leader" (resolved when the crash fires)
    at_ms: float
    duration_ms: float | None = None


@dataclass
class CommitteeConfig:
    size: int = 5
    msg_latency_ms: float = 1.0
    election_timeout_ms: tuple = (150.0, 300.0)
    heartbeat_ms: float = 50.0
    crashes: list = field(default_factory=list)


@dataclass
class Scenario:
    nodes: list
    sources: list
    m: int = 3
    n: int = 5
    request_sources: list | None = None
    tasks: int = 100
    task_interval_ms: float = 500.0
    start_ms: float = 1000.0
    strategy: str = "weighted"
    qos: QosParams = field(default_factory=QosParams)
    deadline_factor: float = 4.0
    deadline_ms: float | None = None
    committee: CommitteeConfig = field(default_factory=CommitteeConfig)
    crypto: str = "default"
    uplink_ms: float = 1.0
    window_anchor_ms: float | None = None
    seed: int = 0
    experiment: dict = field(default_factory=dict)  # free-form knobs for the harness

    @property
    def requested(self) -> list:
        return list(self.request_sources or [s.id for s in self.sources])

    def source(self, sid) -> DataSource:
        return next(s for s in self.sources if s.id == sid)

    def deadline_for(self, source_id) -> float:
        if self.deadline_ms is not None:
            return self.deadline_ms
        mus = [p.latency[source_id][0] for p in self.nodes]
        return self.deadline_factor * (sum(mus) / len(mus))

    def scheme_params(self) -> crypto.SchemeParams:
        if self.crypto == "tiny":
            return crypto.tiny_params(self.m, self.n)
        return crypto.default_params(self.m, self.n)

    def replace(self, **changes) -> "Scenario":
        d = self.to_dict()
        d.update(changes)
        return Scenario.from_dict(d)

    @classmethod
    def load(cls, path) -> "Scenario":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def from_dict(cls, raw: dict) -> "Scenario":
        problems = []
        raw = dict(raw)
        version = raw.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            problems.append(f"schema_version: expected {SCHEMA_VERSION}, got {version}")

        sources = []
        for k, s in enumerate(raw.pop("sources", None) or []):
            period = s.get("period_ms")
            if period is not None and not (isinstance(period, (int, float)) and period > 0):
                problems.append(f"sources[{k}].period_ms: must be > 0 or null")
            sources.append(DataSource(str(s.get("id", f"d{k}")), period))
        if not sources:
            problems.append("sources: at least one data source is required")
        source_ids = [s.id for s in sources]

        default_lat = raw.pop("default_latency", None)
        nodes = []
        for k, nd in enumerate(raw.pop("nodes", None) or []):
            nid = str(nd.get("id", f"o{k}"))
            lat = {}
            for sid in source_ids:
                spec = (nd.get("latency") or {}).get(sid, default_lat and (default_lat["mu"], default_lat["sigma"]))
                if spec is None:
                    problems.append(f"nodes[{k}].latency.{sid}: missing (and no default_latency)")
                    continue
                mu, sigma = (spec["mu"], spec["sigma"]) if isinstance(spec, dict) else spec
                if not mu >= 0:
                    problems.append(f"nodes[{k}].latency.{sid}: mu must be >= 0")
                if not sigma > 0:
                    problems.append(f"nodes[{k}].latency.{sid}: sigma must be > 0")
                lat[sid] = (float(mu), float(sigma))
            down = [tuple(map(float, iv)) for iv in nd.get("down", [])]
            nodes.append(NodeProfile(nid, lat, down))
        if not nodes:
            problems.append("nodes: at least one ordinary node is required")
        if len({p.id for p in nodes}) != len(nodes):
            problems.append("nodes: duplicate ids")

        req = raw.pop("request", {}) or {}
        m, n = int(req.get("m", 3)), int(req.get("n", 5))
        if not 1 <= m <= n:
            problems.append(f"request: need 1 <= m <= n, got m={m}, n={n}")
        if nodes and n > len(nodes):
            problems.append(f"request.n: {n} exceeds the {len(nodes)} registered nodes")
        req_sources = req.get("sources")
        if req_sources is not None:
            for sid in req_sources:
                if sid not in source_ids:
                    problems.append(f"request.sources: unknown source {sid!r}")
            if not req_sources:
                problems.append("request.sources: must not be empty")

        q = raw.pop("qos", {}) or {}
        try:
            qos = QosParams(float(q.get("alpha", 0.5)), float(q.get("beta", 1.5)),
                            float(q.get("epsilon", 1e-6)))
        except ValueError as exc:
            problems.append(f"qos: {exc}")
            qos = QosParams()

        c = raw.pop("committee", {}) or {}
        crashes = []
        for k, cr in enumerate(c.get("crashes", [])):
            node = cr.get("node", "leader")
            if node != "leader" and not (isinstance(node, int) and 0 <= node < int(c.get("size", 5))):
                problems.append(f"committee.crashes[{k}].node: must be 'leader' or a member index")
            crashes.append(CrashSpec(node, float(cr["at_ms"]), cr.get("duration_ms")))
        committee = CommitteeConfig(
            size=int(c.get("size", 5)),
            msg_latency_ms=float(c.get("msg_latency_ms", 1.0)),
            election_timeout_ms=tuple(float(x) for x in c.get("election_timeout_ms", (150.0, 300.0))),
            heartbeat_ms=float(c.get("heartbeat_ms", 50.0)),
            crashes=crashes,
        )
        if committee.size < 1:
            problems.append("committee.size: must be >= 1")
        lo, hi = committee.election_timeout_ms
        if not 0 < lo <= hi:
            problems.append("committee.election_timeout_ms: need 0 < lo <= hi")
        if not 0 < committee.heartbeat_ms < lo:
            problems.append("committee.heartbeat_ms: must be positive and below the election timeout")

        strategy = raw.pop("strategy", "weighted")
        if strategy not in STRATEGIES:
            problems.append(f"strategy: must be one of {', '.join(STRATEGIES)}")
        crypto_name = raw.pop("crypto", "default")
        if crypto_name not in ("default", "tiny"):
            problems.append("crypto: must be 'default' or 'tiny'")
        experiment = raw.pop("experiment", {}) or {}
        if not isinstance(experiment, dict):
            problems.append("experiment: must be a mapping")
            experiment = {}
        tasks = int(raw.pop("tasks", 100))
        if tasks < 0:
            problems.append("tasks: must be >= 0")

        known = {"task_interval_ms", "start_ms", "deadline_factor", "deadline_ms", "uplink_ms",
                 "window_anchor_ms", "seed", "description"}
        for key in sorted(set(raw) - known):
            problems.append(f"{key}: unknown field")
        if problems:
            raise ConfigError(problems)
        return cls(
            nodes=nodes, sources=sources, m=m, n=n, request_sources=req_sources, tasks=tasks,
            task_interval_ms=float(raw.get("task_interval_ms", 500.0)),
            start_ms=float(raw.get("start_ms", 1000.0)), strategy=strategy, qos=qos,
            deadline_factor=float(raw.get("deadline_factor", 4.0)),
            deadline_ms=raw.get("deadline_ms"), committee=committee, crypto=crypto_name,
            uplink_ms=float(raw.get("uplink_ms", 1.0)),
            window_anchor_ms=raw.get("window_anchor_ms"), seed=int(raw.get("seed", 0)),
            experiment=dict(experiment),
        )

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "tasks": self.tasks,
            "task_interval_ms": self.task_interval_ms,
            "start_ms": self.start_ms,
            "strategy": self.strategy,
            "crypto": self.crypto,
            "uplink_ms": self.uplink_ms,
            "deadline_factor": self.deadline_factor,
            "deadline_ms": self.deadline_ms,
            "window_anchor_ms": self.window_anchor_ms,
            "request": {"m": self.m, "n": self.n, "sources": self.request_sources},
            "qos": {"alpha": self.qos.alpha, "beta": self.qos.beta, "epsilon": self.qos.epsilon},
            "committee": {
                "size": self.committee.size,
                "msg_latency_ms": self.committee.msg_latency_ms,
                "election_timeout_ms": list(self.committee.election_timeout_ms),
                "heartbeat_ms": self.committee.heartbeat_ms,
                "crashes": [{"node": c.node, "at_ms": c.at_ms, "duration_ms": c.duration_ms}
                            for c in self.committee.crashes],
            },
            "sources": [{"id": s.id, "period_ms": s.period_ms} for s in self.sources],
            "nodes": [{"id": p.id, "latency": {k: list(v) for k, v in p.latency.items()},
                       "down": [list(iv) for iv in p.down]} for p in self.nodes],
            "experiment": dict(self.experiment),
        }


def truncated_normal(rng, mu, sigma) -> float:
    """One N(mu, sigma^2) draw conditioned on being > 0 (rejection)."""
    while True:
        x = rng.normal(mu, sigma)
        if x > 0.0:
            return float(x)


def truncated_normal_batch(rng, mu, sigma, shape) -> np.ndarray:
    out = rng.normal(mu, sigma, shape)
    bad = out <= 0.0
    while bad.any():
        out[bad] = rng.normal(mu, sigma, int(bad.sum()))
        bad = out <= 0.0
    return out


def fetch(profile: NodeProfile, source: DataSource, dispatch_ms, rng):
    """Draw one fetch: ``(value, completion_ms)``, or ``None`` if the node is down."""
    if not profile.is_up(dispatch_ms):
        return None
    mu, sigma = profile.latency[source.id]
    done = dispatch_ms + truncated_normal(rng, mu, sigma)
    return source.value(done), done


def monte_carlo_agreement(mu, sigma, period, n, threshold, tasks, rng, window_start=0.0):
    """Batch Monte Carlo of the fetch/epoch model, no committee involved.

    Returns ``(anchored_rate, any_epoch_rate)``: the share of tasks whose
    anchored epoch, or any epoch, gathered ``threshold`` agreeing fetches.
    """
    lat = truncated_normal_batch(rng, mu, sigma, (tasks, n))
    anchored, any_epoch = kernels.epoch_agreement(lat, float(window_start), float(period), int(threshold))
    return float(anchored.mean()), float(any_epoch.mean())


def block_random(seed, k) -> int:
    """Stand-in for the previous block hash that seeds request ``k``."""
    return int.from_bytes(hashlib.sha256(b"block|%d|%d" % (seed, k)).digest(), "big")


def dkg_seed(r, subtask_index) -> bytes:
    return r.to_bytes(32, "big") + subtask_index.to_bytes(4, "big")


@dataclass
class TaskOutcome:
    task: int
    subtask_id: str
    source: str
    dispatch_ms: float
    deadline_ms: float
    selected: list
    latencies: dict = field(default_factory=dict)  # node -> ms (fetches that were drawn)
    values: dict = field(default_factory=dict)  # node -> value read
    state: str = "pending"
    end_ms: float | None = None
    value: int | None = None
    aggregated: list = field(default_factory=list)
    anchored_epoch: int | None = None

    @property
    def response_ms(self) -> float:
        if self.end_ms is None:
            return math.nan
        return self.end_ms - self.dispatch_ms

    @property
    def settled(self) -> bool:
        return self.state == SubtaskState.SETTLED.value


@dataclass
class SimResult:
    scenario: Scenario
    seed: int
    trace: list
    contract: OracleContract
    committee: Committee
    outcomes: list

    def trace_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in self.trace)

    def election_violations(self) -> dict:
        return election_violations(self.trace)

    @property
    def settled_fraction(self) -> float:
        if not self.outcomes:
            return math.nan
        return sum(o.settled for o in self.outcomes) / len(self.outcomes)


class Simulation:
    def __init__(self, scenario: Scenario, seed=None, observer=None):
        self.sc = scenario
        self.seed = scenario.seed if seed is None else int(seed)
        self.observer = observer
        ss = np.random.SeedSequence(self.seed)
        lat_ss, com_ss = ss.spawn(2)
        self.lat_rng = np.random.default_rng(lat_ss)
        self.now = 0.0
        self.trace = []
        self._queue = []
        self._seq = itertools.count()
        self._work = 0
        self._dispatched = 0
        self.params = scenario.scheme_params()
        self.profiles = {p.id: p for p in scenario.nodes}
        self.contract = OracleContract([p.id for p in scenario.nodes], self.params,
                                       scenario.qos, scenario.strategy)
        cc = scenario.committee
        self.committee = Committee(
            cc.size, self, np.random.default_rng(com_ss), self.params,
            election_timeout_ms=cc.election_timeout_ms, heartbeat_ms=cc.heartbeat_ms,
            on_package=self._on_package, trace=self.trace.append,
        )
        for mid, pk in self.committee.public_keys().items():
            self.contract.register_committee_member(mid, pk)
        self.outcomes = {}
        self.shares = {}

    # -- network interface used by the committee ---------------------------

    def send(self, src, dst, data, now):
        self.schedule(now + self.sc.committee.msg_latency_ms, EventKind.COMMITTEE_MSG,
                      ("msg", src, dst, data))

    def set_timer(self, node, kind, gen, at):
        self.schedule(at, EventKind.COMMITTEE_MSG, ("timer", node, kind, gen))

    # -- event plumbing ----------------------------------------------------

    def schedule(self, at, kind, payload=(), work=False):
        if at < self.now:
            raise RuntimeError(f"event scheduled in the past: {at} < {self.now}")
        if work:
            self._work += 1
        heapq.heappush(self._queue, SimEvent(at, next(self._seq), kind, payload, work))

    def record(self, event, **fields):
        rec = {"t": round(float(self.now), 6), "ev": event}
        rec.update(fields)
        self.trace.append(rec)

    def dispatch_time(self, k) -> float:
        base = self.sc.start_ms + k * self.sc.task_interval_ms
        x = self.sc.window_anchor_ms
        period = self.sc.source(self.sc.requested[0]).period_ms
        if x is None or period is None:
            return base
        # shift so that an epoch boundary falls exactly x ms after dispatch
        return math.ceil((base + x) / period) * period - x

    def _finished(self) -> bool:
        return (self._dispatched == self.sc.tasks and self._work == 0
                and all(o.state != "pending" for o in self.outcomes.values()))

    def run(self, max_time_ms=None) -> SimResult:
        self.committee.start(0.0)
        for k in range(self.sc.tasks):
            self.schedule(self.dispatch_time(k), EventKind.TASK_DISPATCH, (k,))
        for cr in self.sc.committee.crashes:
            self.schedule(cr.at_ms, EventKind.NODE_CRASH, ("committee", cr))
        for p in self.sc.nodes:
            for a, b in p.down:
                self.schedule(a, EventKind.NODE_CRASH, ("oracle", p.id))
                self.schedule(b, EventKind.NODE_RECOVER, ("oracle", p.id))
        limit = max_time_ms or (self.dispatch_time(max(self.sc.tasks - 1, 0))
                                + 10 * max([self.sc.deadline_for(s) for s in self.sc.requested]) + 60_000)
        while self._queue and not self._finished():
            ev = heapq.heappop(self._queue)
            if ev.time > limit:
                raise RuntimeError(f"simulation did not quiesce by t={limit}")
            self.now = ev.time
            self._handle(ev)
        return SimResult(self.sc, self.seed, self.trace, self.contract, self.committee,
                         [self.outcomes[k] for k in sorted(self.outcomes, key=_outcome_order)])

    def _handle(self, ev: SimEvent):
        payload = ev.payload
        if ev.work:
            self._work -= 1
        kind = ev.kind
        if kind is EventKind.COMMITTEE_MSG:
            tag = payload[0]
            if tag == "msg":
                self.committee.deliver(payload[2], payload[3], self.now)
            elif tag == "timer":
                self.committee.on_timer(payload[1], payload[2], payload[3], self.now)
            else:
                self._deliver_package(payload[1])
        elif kind is EventKind.TASK_DISPATCH:
            self._dispatch(payload[0])
        elif kind is EventKind.FETCH_COMPLETE:
            self._fetch_complete(*payload)
        elif kind is EventKind.FRAGMENT_ARRIVE:
            sid, signer = payload[1], payload[2]
            status = self.committee.submit_bytes(payload[0], self.now)
            self.record("fragment", subtask=sid, signer=signer, status=status)
        elif kind is EventKind.DEADLINE:
            if self.contract.timeout(payload[0], self.now):
                self.record("timeout", subtask=payload[0])
                self._close(payload[0], "timed_out")
        elif kind is EventKind.NODE_CRASH:
            if payload[0] == "committee":
                self._committee_crash(payload[1])
            else:
                self.record("oracle_down", node=payload[1])
        elif kind is EventKind.NODE_RECOVER:
            if payload[0] == "committee":
                self.committee.recover(payload[1], self.now)
            else:
                self.record("oracle_up", node=payload[1])

    def _committee_crash(self, spec: CrashSpec):
        target = spec.node
        if target == "leader":
            leader = self.committee.leader()
            if leader is None:
                self.record("crash_skipped", reason="no leader")
                return
            target = leader.id
        self.committee.crash(target, self.now)
        if spec.duration_ms is not None:
            self.schedule(self.now + float(spec.duration_ms), EventKind.NODE_RECOVER, ("committee", target))

    def _dispatch(self, k):
        self._dispatched += 1
        sc = self.sc
        r = block_random(self.seed, k)
        _, sids = self.contract.submit_request(sc.m, sc.n, sc.requested, r, self.now)
        for sid in sids:
            st = self.contract.subtask(sid)
            params = self.params.with_threshold(st.m, st.n)
            gk, shares = crypto.generate(params, dkg_seed(r, st.index))
            self.contract.register_group_key(sid, gk)
            self.committee.register_task(sid, params, gk, {s.index: s.public for s in shares},
                                         st.m, self.now)
            self.shares[sid] = (params, shares)
            deadline = sc.deadline_for(st.source)
            source = sc.source(st.source)
            anchored = None
            if sc.window_anchor_ms is not None:
                anchored = source.value(self.now + sc.window_anchor_ms)
            out = TaskOutcome(k, sid, st.source, self.now, deadline, list(st.selected),
                              anchored_epoch=anchored)
            self.outcomes[sid] = out
            self.record("dispatch", task=k, subtask=sid, source=st.source, selected=list(st.selected))
            self.schedule(self.now + deadline, EventKind.DEADLINE, (sid,))
            for i, node in enumerate(st.selected, start=1):
                got = fetch(self.profiles[node], source, self.now, self.lat_rng)
                if got is None:
                    self.record("fetch_lost", subtask=sid, node=node)
                    continue
                _, done = got
                out.latencies[node] = done - self.now
                self.schedule(done, EventKind.FETCH_COMPLETE, (sid, node, i), work=True)

    def _fetch_complete(self, sid, node, signer):
        if not self.profiles[node].is_up(self.now):
            self.record("fetch_lost", subtask=sid, node=node)
            return
        st = self.contract.subtask(sid)
        value = self.sc.source(st.source).value(self.now)
        out = self.outcomes[sid]
        out.values[node] = value
        msg = str(value).encode("ascii")
        params, shares = self.shares[sid]
        psig = crypto.partial_sign(msg, shares[signer - 1], params)
        self.record("fetch", subtask=sid, node=node, signer=signer,
                    latency=round(out.latencies[node], 6), value=value)
        self.schedule(self.now + self.sc.uplink_ms, EventKind.FRAGMENT_ARRIVE,
                      (encode_fragment(sid, psig, msg), sid, signer), work=True)

    def _on_package(self, pkg: CommitteePackage, now):
        self.schedule(now + self.sc.committee.msg_latency_ms, EventKind.COMMITTEE_MSG,
                      ("package", pkg.to_bytes()), work=True)

    def _deliver_package(self, data):
        pkg = CommitteePackage.from_bytes(data)
        try:
            done = self.contract.settle(pkg.task_id, pkg, self.now)
        except RejectedPackageError as exc:
            self.record("package_rejected", subtask=pkg.task_id, reason=str(exc))
            return
        if done is None:
            self.record("package_ignored", subtask=pkg.task_id)
            return
        out = self.outcomes[pkg.task_id]
        out.value = int(done.value.decode("ascii"))
        out.aggregated = sorted(done.aggregated, key=self.contract.nodes.index)
        self.record("settle", subtask=pkg.task_id, value=out.value,
                    response=round(self.now - out.dispatch_ms, 6), aggregated=out.aggregated)
        self._close(pkg.task_id, "settled")

    def _close(self, sid, state):
        out = self.outcomes[sid]
        out.state = state
        out.end_ms = self.now if state == "settled" else out.dispatch_ms + out.deadline_ms
        if self.observer is not None:
            self.observer(self, out)


def _outcome_order(sid):
    rid, k = sid[1:].split(".")
    return int(rid), int(k)


def run(scenario: Scenario, seed=None, observer=None) -> SimResult:
    return Simulation(scenario, seed, observer).run()
