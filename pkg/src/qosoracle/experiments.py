"""Experiment drivers behind the command line.

Every driver returns rows plus a CSV rendering with fixed float formatting,
so a rerun with the same (config, seed) is byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
import math
from importlib import resources
from pathlib import Path

import numpy as np

from . import analysis
from .contract import STRATEGIES
from .netsim import Scenario, monte_carlo_agreement, run

CSV_SCHEMA_VERSION = 1


def bundled_configs() -> list[str]:
    root = resources.files("qosoracle") / "configs"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def load_config(name_or_path) -> Scenario:
    """Load a scenario from a path, or by name from the bundled configs."""
    path = Path(name_or_path)
    if path.is_file():
        return Scenario.load(path)
    name = path.name[:-4] if path.name.endswith(".cfg") else path.name
    res = resources.files("qosoracle") / "configs" / f"{name}.cfg"
    if not res.is_file():
        raise FileNotFoundError(
            f"no config {name_or_path!r}; bundled: {', '.join(bundled_configs())}"
        )
    return Scenario.from_dict(json.loads(res.read_text()))


def _fmt(x) -> str:
    if isinstance(x, float):
        return "nan" if math.isnan(x) else f"{x:.6f}"
    return str(x)


def to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def check_run(result) -> list[str]:
    """Internal assertions every simulated run must satisfy."""
    problems = []
    for term, leaders in sorted(result.election_violations().items()):
        problems.append(f"term {term} has several leaders: {sorted(leaders)}")
    for rec in result.contract.records.values():
        if not 0 <= rec.h <= rec.c:
            problems.append(f"{rec.node}/{rec.source}: h={rec.h} outside [0, c={rec.c}]")
        if not 0.0 <= rec.qos <= 1.0:
            problems.append(f"{rec.node}/{rec.source}: QoS {rec.qos} outside [0, 1]")
    return problems


# -- response time ---------------------------------------------------------

RESPONSE_HEADER = ["seed", "task", "strategy", "response_ms"]


def response_time(scenario: Scenario, seeds, strategies=STRATEGIES, tasks=None):
    """Per-task response times for each (strategy, seed).

    Returns ``(rows, summary, problems)``; ``summary`` maps each strategy to
    its mean response time and carries ``reduction``, the relative saving of
    weighted over random selection when both were run.
    """
    rows, problems = [], []
    per_strategy = {s: [] for s in strategies}
    for strategy in strategies:
        sc = scenario.replace(strategy=strategy, **({"tasks": tasks} if tasks is not None else {}))
        for seed in seeds:
            res = run(sc, seed)
            problems += [f"{strategy}/seed {seed}: {p}" for p in check_run(res)]
            for o in res.outcomes:
                rows.append((seed, o.task, strategy, float(o.response_ms)))
                per_strategy[strategy].append(o.response_ms)
    summary = {s: float(np.mean(v)) if v else math.nan for s, v in per_strategy.items()}
    if "weighted" in summary and "random" in summary:
        summary["reduction"] = 1.0 - summary["weighted"] / summary["random"]
    return rows, summary, problems


def response_time_csv(rows, summary) -> str:
    tail = [("mean", "", s, summary[s]) for s in summary if s != "reduction"]
    if "reduction" in summary:
        tail.append(("reduction", "", "weighted_vs_random", summary["reduction"]))
    return to_csv(RESPONSE_HEADER, list(rows) + tail)


# -- QoS trajectory --------------------------------------------------------

QOS_TRACE_HEADER = ["task", "source", "node", "QoS", "selected", "aggregated"]


def qos_trace(scenario: Scenario, seed, tasks=None):
    """QoS of every (node, source) after each finished subtask.

    ``task`` 0 is the cold-start snapshot; row block ``k`` follows the k-th
    subtask to settle or time out.
    """
    sc = scenario.replace(tasks=tasks) if tasks is not None else scenario
    node_ids = [p.id for p in sc.nodes]
    rows = [(0, d, v, 1.0, 0, 0) for d in sc.requested for v in node_ids]
    done = [0]

    def observe(sim, out):
        done[0] += 1
        for v in node_ids:
            rows.append((done[0], out.source, v, float(sim.contract.qos(v, out.source)),
                         int(v in out.selected), int(v in out.aggregated)))

    res = run(sc, seed, observer=observe)
    return rows, res


# -- selection counts ------------------------------------------------------

SELECTION_HEADER = ["node", "source", "QoS", "selected", "aggregated"]


def selection_counts(scenario: Scenario, seed, tasks=None):
    sc = scenario.replace(tasks=tasks) if tasks is not None else scenario
    res = run(sc, seed)
    rows = []
    for d in sc.requested:
        for p in sc.nodes:
            rec = res.contract.record(p.id, d)
            rows.append((p.id, d, float(rec.qos), rec.c, rec.h))
    return rows, res


# -- scalability -----------------------------------------------------------

SCALABILITY_HEADER = ["n", "t", "window_start", "p", "analytical", "simulated"]


def scalability(mu, sigma, period, t, ns, mc_tasks, seed, window_start=None):
    """Analytical and Monte Carlo aggregation success over a sweep of ``n``.

    ``window_start=None`` anchors each task at the best window. The Monte
    Carlo side draws fresh truncated-normal latencies for every point.
    """
    x = analysis.best_window(mu, sigma, period) if window_start is None else float(window_start)
    p = analysis.single_trial_p(analysis.WindowModel(mu, sigma, period, x))
    rows = []
    ss = np.random.SeedSequence(seed)
    for n, child in zip(ns, ss.spawn(len(ns))):
        if n < t:
            continue
        sim, _ = monte_carlo_agreement(mu, sigma, period, n, t, mc_tasks,
                                       np.random.default_rng(child), window_start=x)
        rows.append((n, t, x, p, analysis.agg_success_prob(n, t, p), sim))
    return rows


def scalability_from_scenario(scenario: Scenario, seed, ns=None, mc_tasks=None):
    exp = scenario.experiment
    d = scenario.requested[0]
    mus = {p.latency[d] for p in scenario.nodes}
    if len(mus) != 1:
        raise ValueError("scalability needs every node to share one latency profile")
    (mu, sigma), = mus
    period = scenario.source(d).period_ms
    if period is None:
        raise ValueError("scalability needs a periodic source")
    if ns is None:
        lo, hi = exp.get("sweep_n", [scenario.m, scenario.n])
        ns = range(int(lo), int(hi) + 1)
    start = exp.get("window_start", "best")
    return scalability(mu, sigma, period, scenario.m, list(ns),
                       int(mc_tasks or exp.get("mc_tasks", 10_000)), seed,
                       None if start == "best" else float(start))


def parse_range(text) -> list[int]:
    """``"2..10"`` or ``"1,3,5"`` or ``"7"`` -> list of ints."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        lo, hi = int(lo), int(hi)
        if hi < lo:
            raise ValueError(f"empty range {text!r}")
        return list(range(lo, hi + 1))
    return [int(x) for x in text.split(",") if x.strip()]
