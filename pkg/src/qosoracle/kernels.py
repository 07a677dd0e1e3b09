"""Hot numeric loops.

Every function here takes plain numpy arrays and pre-drawn uniforms, so the
compiled and interpreted paths consume randomness identically and return
bit-identical results.
"""

import numpy as np

from ._accel import njit

# smallest uniform handed to a kernel; keeps every log() finite
UNIFORM_FLOOR = 2.0 ** -60


def open_uniforms(rng, shape):
    """Uniforms on the open interval (0, 1) drawn from a numpy Generator."""
    u = rng.random(shape)
    np.maximum(u, UNIFORM_FLOOR, out=u)
    return u


def aexpj_draws_needed(n_items):
    # m initial keys + one jump draw + (jump draw, key draw) per replacement
    return 2 * n_items + 1


@njit
def _argmin_stable(keys, idx):
    best = 0
    for j in range(1, keys.shape[0]):
        if keys[j] < keys[best] or (keys[j] == keys[best] and idx[j] < idx[best]):
            best = j
    return best


@njit
def aexpj_select(weights, m, uniforms):
    """Exponential-jump weighted reservoir sampling over one stream.

    Keys are held as logs (``log u / w``) so tiny weights do not underflow
    to a zero key. Returns ``(indices, log_keys, skip_left, draws_used)``;
    the slot order of ``indices`` is reservoir order, not stream order.
    """
    n = weights.shape[0]
    k = min(m, n)
    res_idx = np.empty(k, dtype=np.int64)
    res_key = np.empty(k, dtype=np.float64)
    pos = 0
    for i in range(k):
        res_idx[i] = i
        res_key[i] = np.log(uniforms[pos]) / weights[i]
        pos += 1
    if k == 0 or k == n:
        return res_idx, res_key, 0.0, pos

    jmin = _argmin_stable(res_key, res_idx)
    log_t = res_key[jmin]
    skip = np.log(uniforms[pos]) / log_t
    pos += 1
    for c in range(k, n):
        skip -= weights[c]
        if skip <= 0.0:
            # new key is uniform on (T_w, 1) once mapped through ^(1/w_c)
            t_w = np.exp(weights[c] * log_t)
            r2 = t_w + uniforms[pos] * (1.0 - t_w)
            pos += 1
            res_idx[jmin] = c
            res_key[jmin] = np.log(r2) / weights[c]
            jmin = _argmin_stable(res_key, res_idx)
            log_t = res_key[jmin]
            skip = np.log(uniforms[pos]) / log_t
            pos += 1
    return res_idx, res_key, skip, pos


@njit
def ares_select(weights, m, uniforms):
    """One key per item, keep the ``m`` largest. Ties go to the earlier item."""
    n = weights.shape[0]
    k = min(m, n)
    keys = np.empty(n, dtype=np.float64)
    for i in range(n):
        keys[i] = np.log(uniforms[i]) / weights[i]
    order = np.argsort(-keys, kind="mergesort")
    res_idx = order[:k].copy()
    res_key = np.empty(k, dtype=np.float64)
    for j in range(k):
        res_key[j] = keys[res_idx[j]]
    return res_idx, res_key


@njit
def aexpj_trials(weights, m, uniforms):
    """Run one A-ExpJ draw per row of ``uniforms``.

    Returns per-item inclusion counts and, per trial, the selected set as a
    bitmask over item positions.
    """
    trials = uniforms.shape[0]
    counts = np.zeros(weights.shape[0], dtype=np.int64)
    masks = np.empty(trials, dtype=np.int64)
    for t in range(trials):
        idx, _, _, _ = aexpj_select(weights, m, uniforms[t])
        mask = 0
        for j in idx:
            counts[j] += 1
            mask |= 1 << j
        masks[t] = mask
    return counts, masks


@njit
def ares_trials(weights, m, uniforms):
    trials = uniforms.shape[0]
    counts = np.zeros(weights.shape[0], dtype=np.int64)
    masks = np.empty(trials, dtype=np.int64)
    for t in range(trials):
        idx, _ = ares_select(weights, m, uniforms[t])
        mask = 0
        for j in idx:
            counts[j] += 1
            mask |= 1 << j
        masks[t] = mask
    return counts, masks


@njit
def epoch_agreement(latencies, window_start, period, threshold):
    """Per-task aggregation outcome when values are read at fetch completion.

    ``latencies`` is (tasks, n); the epoch grid is anchored so that one
    epoch begins exactly ``window_start`` ms after dispatch. Returns two
    boolean arrays: whether the anchored epoch collected ``threshold``
    fetches, and whether any epoch did.
    """
    tasks, n = latencies.shape
    anchored = np.zeros(tasks, dtype=np.bool_)
    any_epoch = np.zeros(tasks, dtype=np.bool_)
    epochs = np.empty(n, dtype=np.int64)
    for r in range(tasks):
        in_window = 0
        for j in range(n):
            e = np.floor((latencies[r, j] - window_start) / period)
            epochs[j] = np.int64(e)
            if epochs[j] == 0:
                in_window += 1
        anchored[r] = in_window >= threshold
        srt = np.sort(epochs)
        run = 1
        best = 1 if n > 0 else 0
        for j in range(1, n):
            if srt[j] == srt[j - 1]:
                run += 1
            else:
                run = 1
            if run > best:
                best = run
        any_epoch[r] = best >= threshold
    return anchored, any_epoch
