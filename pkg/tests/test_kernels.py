"""Compiled and interpreted kernels must make identical selections.

Floating outputs may differ in the last ulp (numba's log is not libm's), so
they are compared at 1e-12 relative; integer and boolean outputs exactly.
"""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

from qosoracle import _accel, kernels

needs_numba = pytest.mark.skipif(not _accel.NUMBA_ENABLED, reason="numba path disabled")


def same(fast, slow):
    for a, b in zip(fast, slow):
        a, b = np.asarray(a), np.asarray(b)
        if a.dtype.kind == "f":
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=0)
        else:
            np.testing.assert_array_equal(a, b)


def _weights(rng, n):
    w = rng.uniform(0.01, 5.0, n)
    w[rng.integers(0, n)] = 1e-6  # a floored weight in every stream
    return w


@needs_numba
@pytest.mark.parametrize("n,m", [(1, 1), (5, 2), (10, 5), (40, 7), (12, 12)])
def test_aexpj_select_parity(n, m):
    rng = np.random.default_rng(n * 100 + m)
    for _ in range(20):
        w = _weights(rng, n)
        u = kernels.open_uniforms(rng, kernels.aexpj_draws_needed(n))
        fast = kernels.aexpj_select(w, m, u)
        slow = kernels.aexpj_select.py_func(w, m, u)
        same(fast, slow)


@needs_numba
def test_ares_and_trial_kernels_parity():
    rng = np.random.default_rng(7)
    w = _weights(rng, 6)
    u = kernels.open_uniforms(rng, (500, 6))
    same(kernels.ares_trials(w, 3, u), kernels.ares_trials.py_func(w, 3, u))
    u = kernels.open_uniforms(rng, (500, kernels.aexpj_draws_needed(6)))
    same(kernels.aexpj_trials(w, 3, u), kernels.aexpj_trials.py_func(w, 3, u))


@needs_numba
def test_epoch_agreement_parity():
    rng = np.random.default_rng(3)
    lat = np.abs(rng.normal(100, 30, (2000, 5))) + 1e-3
    fast = kernels.epoch_agreement(lat, 75.0, 50.0, 3)
    slow = kernels.epoch_agreement.py_func(lat, 75.0, 50.0, 3)
    same(fast, slow)


def test_epoch_agreement_by_hand():
    lat = np.array([[80.0, 90.0, 124.9, 130.0], [10.0, 20.0, 200.0, 300.0]])
    anchored, any_epoch = kernels.epoch_agreement(lat, 75.0, 50.0, 3)
    # row 0: three fetches land in [75, 125); row 1: no epoch holds three
    assert anchored.tolist() == [True, False]
    assert any_epoch.tolist() == [True, False]


def test_open_uniforms_stay_inside_unit_interval():
    u = kernels.open_uniforms(np.random.default_rng(0), 100_000)
    assert u.min() > 0.0 and u.max() < 1.0


_PROBE = """
import json, numpy as np
from qosoracle import _accel
from qosoracle.sampling import a_expj_sample, inclusion_trials
from qosoracle.netsim import monte_carlo_agreement
s = a_expj_sample([(i, 1.0 + i) for i in range(20)], 6, np.random.default_rng(5))
c, _ = inclusion_trials([4, 3, 2, 1], 2, 2000, np.random.default_rng(1))
mc = monte_carlo_agreement(100.0, 30.0, 50.0, 5, 3, 2000, np.random.default_rng(2), 75.0)
print(json.dumps({"numba": _accel.NUMBA_ENABLED, "sample": sorted(s),
                  "counts": c.tolist(), "mc": list(mc)}))
"""


def _probe(disable):
    env = dict(os.environ)
    env.pop("QOSORACLE_DISABLE_NUMBA", None)
    if disable:
        env["QOSORACLE_DISABLE_NUMBA"] = "1"
    out = subprocess.run([sys.executable, "-c", _PROBE], env=env, capture_output=True,
                         text=True, check=True)
    return json.loads(out.stdout)


@needs_numba
def test_env_flag_switches_path_without_changing_results():
    compiled, plain = _probe(False), _probe(True)
    assert compiled.pop("numba") is True
    assert plain.pop("numba") is False
    assert compiled == plain
