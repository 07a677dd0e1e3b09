"""Oracle contract state machine.

Requests ``(m, n, D, r)`` are split into one subtask per data source. Each
subtask picks ``n`` ordinary nodes weighted by their QoS toward that source,
waits for a committee package, verifies it and feeds the outcome back into
the QoS table:

    t_total = max aggregated response time
    t_delay = beta * t_total
    T       = 1 - t / t_delay          (t := t_delay for non-aggregated nodes)
    A       = h / c
    QoS     = alpha * T + (1 - alpha) * A
"""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import crypto
from .sampling import a_expj_sample


class ContractError(Exception):
    pass


class ParameterError(ContractError, ValueError):
    pass


class InsufficientNodesError(ContractError):
    pass


class UnknownSubtaskError(ContractError, KeyError):
    pass


class RejectedPackageError(ContractError):
    pass


class RequestFailedError(ContractError):
    pass


class NoConsensusError(ContractError):
    pass


class SubtaskState(str, Enum):
    SELECTING = "selecting"
    PENDING = "pending"
    SETTLED = "settled"
    TIMED_OUT = "timed_out"


STRATEGIES = ("weighted", "random", "worst-only")
AGGREGATIONS = ("median", "majority", "first-settled")


@dataclass(frozen=True)
class QosParams:
    alpha: float = 0.5
    beta: float = 1.5
    epsilon: float = 1e-6

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ParameterError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.beta >= 1.0:
            raise ParameterError(f"beta must be >= 1, got {self.beta}")
        if not self.epsilon > 0.0:
            raise ParameterError("epsilon must be > 0")


@dataclass
class QosRecord:
    node: str
    source: str
    h: int = 0
    c: int = 0
    last_t: float = 1.0
    qos: float = 1.0  # cold start: never-selected nodes look perfect

    @property
    def accuracy(self) -> float:
        return self.h / self.c if self.c else 1.0

    def recompute(self, alpha):
        self.qos = alpha * self.last_t + (1.0 - alpha) * self.accuracy


@dataclass
class Request:
    id: str
    m: int
    n: int
    sources: tuple
    r: int
    subtasks: list = field(default_factory=list)


@dataclass
class Subtask:
    id: str
    request_id: str
    index: int
    source: str
    m: int
    n: int
    r: int
    created_ms: float = 0.0
    state: SubtaskState = SubtaskState.SELECTING
    selected: list = field(default_factory=list)  # signer index i is selected[i - 1]
    group_key: crypto.GroupKey | None = None
    value: bytes | None = None
    settled_ms: float | None = None
    settle_seq: int | None = None
    aggregated: dict = field(default_factory=dict)  # node id -> response time ms

    @property
    def terminal(self) -> bool:
        return self.state in (SubtaskState.SETTLED, SubtaskState.TIMED_OUT)

    def signer_of(self, node_id) -> int:
        return self.selected.index(node_id) + 1


@dataclass
class Settlement:
    subtask_id: str
    value: bytes
    settled_ms: float
    aggregated: dict


@dataclass
class Result:
    values: list
    final: object
    strategy: str


def _digest(value: bytes) -> str:
    return hashlib.sha256(value).hexdigest()


def _numeric(value: bytes):
    text = value.decode("ascii").strip()
    try:
        return int(text)
    except ValueError:
        return float(text)


class OracleContract:
    """Single-writer contract state; every mutation takes the caller's clock."""

    def __init__(self, nodes, params: crypto.SchemeParams, qos: QosParams | None = None,
                 strategy="weighted"):
        if strategy not in STRATEGIES:
            raise ParameterError(f"unknown selection strategy {strategy!r}")
        self.nodes = list(nodes)
        if len(set(self.nodes)) != len(self.nodes):
            raise ParameterError("duplicate node ids in registry")
        self.params = params
        self.qos_params = qos or QosParams()
        self.strategy = strategy
        self.committee_keys = {}
        self.requests = {}
        self.subtasks = {}
        self.records = {}
        self._settle_seq = 0

    # -- registry ---------------------------------------------------------

    def register_committee_member(self, member_id, public_key: int):
        self.committee_keys[member_id] = public_key

    def record(self, node, source) -> QosRecord:
        key = (node, source)
        rec = self.records.get(key)
        if rec is None:
            rec = self.records[key] = QosRecord(node, source)
        return rec

    def qos(self, node, source) -> float:
        return self.record(node, source).qos

    # -- requests ---------------------------------------------------------

    def submit_request(self, m, n, sources, r, now=0.0):
        sources = tuple(sources)
        if not sources:
            raise ParameterError("request needs at least one data source")
        if not (1 <= m <= n):
            raise ParameterError(f"need 1 <= m <= n, got m={m}, n={n}")
        rid = f"q{len(self.requests)}"
        req = Request(rid, m, n, sources, r)
        self.requests[rid] = req
        for k, d in enumerate(sources):
            st = Subtask(f"{rid}.{k}", rid, k, d, m, n, r, created_ms=now)
            self.subtasks[st.id] = st
            req.subtasks.append(st.id)
        for sid in req.subtasks:
            self.select_nodes(sid)
        return rid, list(req.subtasks)

    def subtask(self, sid) -> Subtask:
        try:
            return self.subtasks[sid]
        except KeyError:
            raise UnknownSubtaskError(sid) from None

    def selection_rng(self, st: Subtask):
        return np.random.default_rng(np.random.SeedSequence([st.r, st.index]))

    def select_nodes(self, sid) -> list:
        st = self.subtask(sid)
        if st.state is not SubtaskState.SELECTING:
            return list(st.selected)
        if st.n > len(self.nodes):
            raise InsufficientNodesError(f"subtask needs {st.n} nodes, registry has {len(self.nodes)}")
        eps = self.qos_params.epsilon
        if self.strategy == "worst-only":
            # a node has to be tried once before it can be judged worst
            ranked = sorted(range(len(self.nodes)),
                            key=lambda j: (self.record(self.nodes[j], st.source).c > 0,
                                           self.qos(self.nodes[j], st.source), j))
            chosen = {self.nodes[j] for j in ranked[: st.n]}
        else:
            if self.strategy == "weighted":
                stream = [(v, max(self.qos(v, st.source), eps)) for v in self.nodes]
            else:
                stream = [(v, 1.0) for v in self.nodes]
            chosen = a_expj_sample(stream, st.n, self.selection_rng(st))
        st.selected = [v for v in self.nodes if v in chosen]
        for v in st.selected:
            self.record(v, st.source).c += 1
        st.state = SubtaskState.PENDING
        return list(st.selected)

    def register_group_key(self, sid, key: crypto.GroupKey):
        self.subtask(sid).group_key = key

    # -- settlement -------------------------------------------------------

    def settle(self, sid, package, now=0.0) -> Settlement | None:
        """Verify a committee package and settle the subtask.

        Returns ``None`` (no-op) when the subtask is already terminal.
        """
        st = self.subtask(sid)
        if st.terminal:
            return None
        leader_pk = self.committee_keys.get(package.leader_id)
        if leader_pk is None or not crypto.leader_verify(
            package.body_bytes(), package.leader_signature, leader_pk, self.params
        ):
            raise RejectedPackageError(f"{sid}: leader signature does not verify")
        if st.group_key is None or not crypto.verify(
            package.msg, st.group_key, package.group_signature, self.params
        ):
            raise RejectedPackageError(f"{sid}: group signature does not verify")
        signers = set(package.group_signature.signers)
        if set(package.response_times) != signers or len(signers) < st.m:
            raise RejectedPackageError(f"{sid}: response times do not match the signer set")
        if not all(1 <= i <= len(st.selected) for i in signers):
            raise RejectedPackageError(f"{sid}: signer outside the selected set")

        st.state = SubtaskState.SETTLED
        st.value = package.msg
        st.settled_ms = now
        st.settle_seq = self._settle_seq
        self._settle_seq += 1
        st.aggregated = {st.selected[i - 1]: float(t) for i, t in package.response_times.items()}
        self.update_qos(st, st.aggregated)
        return Settlement(sid, st.value, now, dict(st.aggregated))

    def update_qos(self, st: Subtask, times: dict, params: QosParams | None = None):
        """Apply one task's outcome to every selected node's record.

        ``times`` maps aggregated node ids to their committee receipt times,
        measured from dispatch.
        """
        params = params or self.qos_params
        t_total = max(times.values()) if times else 0.0
        t_delay = params.beta * t_total
        out = []
        for v in st.selected:
            rec = self.record(v, st.source)
            if v in times:
                rec.h += 1
                rel = 1.0 - times[v] / t_delay if t_delay > 0 else 1.0
                rec.last_t = min(1.0, max(0.0, rel))
            else:
                rec.last_t = 0.0
            rec.recompute(params.alpha)
            out.append(rec)
        return out

    def timeout(self, sid, now=0.0) -> bool:
        st = self.subtask(sid)
        if st.state is not SubtaskState.PENDING:
            return False
        st.state = SubtaskState.TIMED_OUT
        st.settled_ms = now
        self.update_qos(st, {})
        return True

    # -- results ----------------------------------------------------------

    def aggregate_multi_source(self, rid, strategy="median") -> Result:
        if strategy not in AGGREGATIONS:
            raise ParameterError(f"unknown aggregation strategy {strategy!r}")
        req = self.requests[rid]
        subtasks = [self.subtasks[s] for s in req.subtasks]
        if not all(st.terminal for st in subtasks):
            raise ContractError(f"request {rid} still has pending subtasks")
        settled = [st for st in subtasks if st.state is SubtaskState.SETTLED]
        if not settled:
            raise RequestFailedError(f"request {rid}: no subtask settled")
        values = [st.value if st.state is SubtaskState.SETTLED else None for st in subtasks]

        if strategy == "first-settled":
            final = min(settled, key=lambda st: st.settle_seq).value
        elif strategy == "majority":
            groups = {}
            for st in settled:
                groups.setdefault(_digest(st.value), []).append(st.value)
            best = max(groups.values(), key=len)
            if 2 * len(best) <= len(settled):
                raise NoConsensusError(f"request {rid}: no strict majority among {len(settled)} values")
            final = best[0]
        else:
            ranked = sorted((st.value for st in settled), key=_numeric)
            final = ranked[(len(ranked) - 1) // 2]  # lower median, original payload
        return Result(values, final, strategy)

    # -- export -----------------------------------------------------------

    def qos_rows(self):
        for (node, source) in sorted(self.records, key=lambda k: (k[1], self._pos(k[0]))):
            rec = self.records[(node, source)]
            yield rec

    def _pos(self, node):
        try:
            return self.nodes.index(node)
        except ValueError:
            return len(self.nodes)

    def qos_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["node", "source", "c", "h", "A", "lastT", "QoS"])
        for rec in self.qos_rows():
            w.writerow([rec.node, rec.source, rec.c, rec.h, f"{rec.accuracy:.6f}",
                        f"{rec.last_t:.6f}", f"{rec.qos:.6f}"])
        return buf.getvalue()

    def export_state(self) -> dict:
        return {
            "schema_version": 1,
            "strategy": self.strategy,
            "qos_params": {"alpha": self.qos_params.alpha, "beta": self.qos_params.beta,
                           "epsilon": self.qos_params.epsilon},
            "nodes": list(self.nodes),
            "requests": [
                {"id": r.id, "m": r.m, "n": r.n, "sources": list(r.sources),
                 "r": format(r.r, "x"), "subtasks": list(r.subtasks)}
                for r in self.requests.values()
            ],
            "subtasks": [
                {"id": st.id, "source": st.source, "state": st.state.value,
                 "selected": list(st.selected),
                 "value": st.value.decode("ascii", "replace") if st.value is not None else None,
                 "created_ms": st.created_ms, "settled_ms": st.settled_ms,
                 "aggregated": dict(st.aggregated)}
                for st in self.subtasks.values()
            ],
            "qos": [
                {"node": rec.node, "source": rec.source, "c": rec.c, "h": rec.h,
                 "A": rec.accuracy, "lastT": rec.last_t, "QoS": rec.qos}
                for rec in self.qos_rows()
            ],
        }
