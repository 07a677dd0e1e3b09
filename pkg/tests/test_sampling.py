import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from qosoracle.sampling import (
    InvalidWeightError,
    WeightedItem,
    a_expj_reservoir,
    a_expj_sample,
    a_res_sample,
    inclusion_trials,
)

from oracles import inclusion_probabilities, ordered_draw_probabilities

TRIALS = 200_000


def freqs(weights, m, trials=TRIALS, seed=0, method="aexpj"):
    counts, _ = inclusion_trials(weights, m, trials, np.random.default_rng(seed), method)
    return counts / trials


@pytest.mark.parametrize("method", ["aexpj", "ares"])
def test_uniform_weights_give_uniform_inclusion(method):
    f = freqs([1.0] * 5, 2, method=method)
    assert np.all(np.abs(f - 0.4) <= 0.01)


@pytest.mark.parametrize("method", ["aexpj", "ares"])
def test_single_draw_is_proportional_to_weight(method):
    f = freqs([3.0, 1.0], 1, method=method)
    assert abs(f[0] - 0.75) <= 0.01
    assert abs(f[1] - 0.25) <= 0.01


@pytest.mark.parametrize("method", ["aexpj", "ares"])
def test_four_three_two_one_matches_enumeration(method):
    expected = inclusion_probabilities([4, 3, 2, 1], 2)
    # frozen from the enumeration oracle
    assert expected == pytest.approx([0.7158730, 0.6083333, 0.4412698, 0.2345238], abs=1e-6)
    f = freqs([4, 3, 2, 1], 2, method=method)
    assert np.all(np.abs(f - expected) <= 0.01)


def test_two_samplers_agree_per_item():
    w = [5.0, 0.5, 2.0, 1.0, 3.0, 0.25]
    a = freqs(w, 3, trials=100_000, seed=11)
    b = freqs(w, 3, trials=100_000, seed=12, method="ares")
    assert np.all(np.abs(a - b) <= 0.01)


CHI2_CASES = [
    ([1.0, 2.0], 1),
    ([1.0, 1.0, 1.0], 2),
    ([0.2, 1.0, 5.0], 1),
    ([4.0, 3.0, 2.0, 1.0], 2),
    ([4.0, 3.0, 2.0, 1.0], 3),
    ([0.5, 0.5, 2.0, 3.0, 1.0], 2),
    ([1.0, 2.0, 3.0, 4.0, 5.0], 3),
    ([0.3, 0.9, 1.5, 0.6, 2.2, 1.1], 1),
    ([0.3, 0.9, 1.5, 0.6, 2.2, 1.1], 2),
    ([0.3, 0.9, 1.5, 0.6, 2.2, 1.1], 3),
    ([1.0] * 6, 3),
]


def subset_chi2(weights, m, method, trials=100_000, seed=3):
    probs = ordered_draw_probabilities(weights, m)
    subsets = sorted(probs, key=lambda s: sorted(s))
    masks = [sum(1 << j for j in s) for s in subsets]
    _, got = inclusion_trials(weights, m, trials, np.random.default_rng(seed), method)
    observed = np.array([np.count_nonzero(got == mk) for mk in masks])
    assert observed.sum() == trials  # every draw lands on a valid subset
    expected = np.array([float(probs[s]) for s in subsets]) * trials
    return stats.chisquare(observed, expected).pvalue


@pytest.mark.parametrize("weights,m", CHI2_CASES)
@pytest.mark.parametrize("method", ["aexpj", "ares"])
def test_subset_distribution_chi_square(weights, m, method):
    assert subset_chi2(weights, m, method) > 0.001


def test_heavier_item_is_included_at_least_as_often():
    w = [2.0, 1.5, 1.0, 0.7]
    f = freqs(w, 2, trials=100_000, seed=5)
    sd = math.sqrt(0.25 / 100_000)
    for a in range(len(w)):
        for b in range(a + 1, len(w)):
            assert f[a] >= f[b] - 3 * sd


def test_reservoir_invariants():
    stream = [(f"n{i}", w) for i, w in enumerate([0.5, 3.0, 1.0, 2.0, 0.1, 4.0, 1e-6])]
    res = a_expj_reservoir(stream, 3, np.random.default_rng(1))
    assert len(res.entries) == 3
    keys = [k for _, k in res.entries]
    assert all(0.0 < k < 1.0 for k in keys)
    assert res.threshold == pytest.approx(min(keys), rel=1e-12)


def test_deterministic_under_fixed_seed():
    stream = [WeightedItem(f"n{i}", 1.0 + i) for i in range(10)]
    runs = [a_expj_sample(stream, 4, np.random.default_rng(42)) for _ in range(3)]
    assert runs[0] == runs[1] == runs[2]
    runs = [a_res_sample(stream, 4, np.random.default_rng(42)) for _ in range(2)]
    assert runs[0] == runs[1]


def test_accepts_items_or_pairs():
    rng_a, rng_b = np.random.default_rng(9), np.random.default_rng(9)
    pairs = [("a", 1.0), ("b", 2.0), ("c", 3.0)]
    items = [WeightedItem(i, w) for i, w in pairs]
    assert a_expj_sample(pairs, 2, rng_a) == a_expj_sample(items, 2, rng_b)


def test_empty_stream_and_short_stream():
    rng = np.random.default_rng(0)
    assert a_expj_sample([], 3, rng) == set()
    assert a_res_sample([], 3, rng) == set()
    assert a_expj_sample([("x", 1.0), ("y", 2.0)], 5, rng) == {"x", "y"}


@pytest.mark.parametrize("bad", [0.0, -1.0, float("nan"), float("inf")])
@pytest.mark.parametrize("sampler", [a_expj_sample, a_res_sample])
def test_bad_weight_names_the_item(bad, sampler):
    with pytest.raises(InvalidWeightError) as info:
        sampler([("ok", 1.0), ("broken", bad)], 1, np.random.default_rng(0))
    assert info.value.item_id == "broken"


@pytest.mark.parametrize("m", [0, -2, 1.5])
def test_bad_sample_size(m):
    with pytest.raises(ValueError):
        a_expj_sample([("a", 1.0)], m, np.random.default_rng(0))


def test_trials_reject_too_many_items_and_unknown_method():
    with pytest.raises(ValueError):
        inclusion_trials([1.0] * 63, 2, 10, np.random.default_rng(0))
    with pytest.raises(ValueError):
        inclusion_trials([1.0, 2.0], 1, 10, np.random.default_rng(0), method="nope")


weights_st = st.lists(
    st.floats(min_value=1e-6, max_value=1e3, allow_nan=False, allow_infinity=False),
    min_size=0, max_size=30,
)


@settings(max_examples=200, deadline=None)
@given(weights=weights_st, m=st.integers(1, 12), seed=st.integers(0, 2**32 - 1))
def test_property_size_distinct_deterministic(weights, m, seed):
    stream = [(i, w) for i, w in enumerate(weights)]
    a = a_expj_sample(stream, m, np.random.default_rng(seed))
    b = a_expj_sample(stream, m, np.random.default_rng(seed))
    assert a == b
    assert len(a) == min(m, len(weights))
    assert a <= set(range(len(weights)))
    r = a_res_sample(stream, m, np.random.default_rng(seed))
    assert len(r) == min(m, len(weights))


@settings(max_examples=100, deadline=None)
@given(weights=st.lists(st.floats(1e-6, 1e3), min_size=1, max_size=20),
       m=st.integers(1, 8), seed=st.integers(0, 2**32 - 1))
def test_property_reservoir_threshold_is_min_key(weights, m, seed):
    res = a_expj_reservoir(list(enumerate(weights)), m, np.random.default_rng(seed))
    keys = [k for _, k in res.entries]
    assert len(keys) == min(m, len(weights))
    assert all(0.0 <= k < 1.0 for k in keys)
    assert res.threshold == min(keys)  # exp is monotone, so this is exact
