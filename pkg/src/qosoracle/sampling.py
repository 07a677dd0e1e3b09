"""Weighted random sampling without replacement.

Two samplers with the same output distribution: :func:`a_expj_sample`
(exponential jumps, one log draw per skip) and :func:`a_res_sample` (one
key per item, the reference). Item ``i`` gets key ``u_i ** (1 / w_i)`` and
the ``m`` largest keys win.

The threshold that drives the jumps is the smallest *key* in the reservoir.
Some write-ups of the algorithm say "smallest weight"; that reading breaks
the inclusion probabilities, so it is not used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Iterable

import numpy as np

from . import kernels


class InvalidWeightError(ValueError):
    """A stream item carried a weight that is not a positive finite number."""

    def __init__(self, item_id, weight):
        super().__init__(f"item {item_id!r} has weight {weight!r}; weights must be > 0")
        self.item_id = item_id
        self.weight = weight


@dataclass(frozen=True)
class WeightedItem:
    id: Hashable
    weight: float


@dataclass
class Reservoir:
    """Final reservoir state of one A-ExpJ pass."""

    capacity: int
    entries: list = field(default_factory=list)  # (item id, key) in stream order
    log_threshold: float = 0.0
    skip_budget: float = 0.0

    @property
    def threshold(self) -> float:
        return math.exp(self.log_threshold)

    @property
    def ids(self) -> set:
        return {item_id for item_id, _ in self.entries}


def _unpack(stream) -> tuple[list, np.ndarray]:
    ids = []
    weights = []
    for item in stream:
        if isinstance(item, WeightedItem):
            item_id, w = item.id, item.weight
        else:
            item_id, w = item
        w = float(w)
        if not (w > 0.0) or not math.isfinite(w):
            raise InvalidWeightError(item_id, w)
        ids.append(item_id)
        weights.append(w)
    return ids, np.asarray(weights, dtype=np.float64)


def _check_m(m):
    if int(m) != m or m < 1:
        raise ValueError(f"sample size must be a positive integer, got {m!r}")
    return int(m)


def a_expj_reservoir(stream: Iterable, m: int, rng: np.random.Generator) -> Reservoir:
    m = _check_m(m)
    ids, weights = _unpack(stream)
    res = Reservoir(capacity=m)
    if not ids:
        return res
    u = kernels.open_uniforms(rng, kernels.aexpj_draws_needed(len(ids)))
    idx, log_keys, skip, _ = kernels.aexpj_select(weights, m, u)
    order = np.argsort(idx, kind="mergesort")
    res.entries = [(ids[idx[j]], math.exp(log_keys[j])) for j in order]
    res.log_threshold = float(log_keys.min())
    res.skip_budget = float(skip)
    return res


def a_expj_sample(stream: Iterable, m: int, rng: np.random.Generator) -> set:
    """Pick ``min(m, len(stream))`` distinct ids, biased by weight.

    Items may be :class:`WeightedItem` or ``(id, weight)`` pairs. Raises
    :class:`InvalidWeightError` on any weight <= 0.
    """
    return a_expj_reservoir(stream, m, rng).ids


def a_res_sample(stream: Iterable, m: int, rng: np.random.Generator) -> set:
    m = _check_m(m)
    ids, weights = _unpack(stream)
    if not ids:
        return set()
    u = kernels.open_uniforms(rng, len(ids))
    idx, _ = kernels.ares_select(weights, m, u)
    return {ids[j] for j in idx}


def inclusion_trials(weights, m, trials, rng, method="aexpj"):
    """Repeat a sampler ``trials`` times over a fixed weight vector.

    Returns ``(counts, masks)``: how often each position was included, and the
    selected set of every trial as a bitmask (bit ``j`` = position ``j``).
    """
    m = _check_m(m)
    _, w = _unpack(enumerate(weights))
    if len(w) > 62:
        raise ValueError("bitmask trials support at most 62 items")
    if method == "aexpj":
        u = kernels.open_uniforms(rng, (trials, kernels.aexpj_draws_needed(len(w))))
        return kernels.aexpj_trials(w, m, u)
    if method == "ares":
        u = kernels.open_uniforms(rng, (trials, len(w)))
        return kernels.ares_trials(w, m, u)
    raise ValueError(f"unknown method {method!r}")
