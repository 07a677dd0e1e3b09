import hashlib
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qosoracle import crypto
from qosoracle.crypto import (
    DuplicateSignerError,
    GroupKey,
    GroupSignature,
    InvalidFragmentError,
    KeyConsumedError,
    KeyShare,
    ParameterError,
    PartialSignature,
    SigningSession,
    ThresholdNotMetError,
    aggregate,
    combine_public_shares,
    generate,
    hash_to_scalar,
    lagrange_at_zero,
    partial_sign,
    verify,
    verify_partial,
)

from oracles import brute_force_dlog


def pubs(shares):
    return {s.index: s.public for s in shares}


def test_group_parameters_are_sound():
    p = crypto.default_params()
    assert p.s == 256
    assert p.p.bit_length() == 512
    assert (p.p - 1) % p.q == 0
    assert pow(p.g, p.q, p.p) == 1 and p.g != 1
    t = crypto.tiny_params()
    assert (t.p, t.q, t.g) == (467, 233, 4)


@pytest.mark.parametrize("p,q,g", [(467, 232, 4), (468, 233, 4), (467, 233, 1), (467, 233, 2), (23, 7, 2)])
def test_bad_group_rejected(p, q, g):
    with pytest.raises(ParameterError):
        crypto.SchemeParams(p, q, g)


@pytest.mark.parametrize("t,n", [(0, 3), (4, 3), (1, 0)])
def test_bad_threshold_rejected(t, n):
    with pytest.raises(ParameterError):
        crypto.tiny_params(t, n)


def test_single_share_is_the_group_secret():
    params = crypto.default_params(1, 1)
    gk, (share,) = generate(params, b"solo")
    assert gk.value == pow(params.g, share.secret, params.p)
    assert share.public == gk.value


def test_any_three_shares_interpolate_to_same_secret():
    params = crypto.default_params(3, 5)
    gk, shares = generate(params, 1234)
    secrets = {s.index: s.secret for s in shares}
    found = set()
    for subset in [(1, 2, 3), (2, 4, 5), (1, 3, 5)]:
        lam = lagrange_at_zero(subset, params.q)
        found.add(sum(lam[i] * secrets[i] for i in subset) % params.q)
    (secret,) = found
    assert pow(params.g, secret, params.p) == gk.value


def test_tiny_shares_match_brute_force_discrete_log():
    params = crypto.tiny_params(2, 3)
    gk, shares = generate(params, b"tiny-seed")
    for s in shares:
        assert brute_force_dlog(params.g, s.public, params.p, params.q) == s.secret
    secret = brute_force_dlog(params.g, gk.value, params.p, params.q)
    lam = lagrange_at_zero([1, 2], params.q)
    assert (lam[1] * shares[0].secret + lam[2] * shares[1].secret) % params.q == secret


def test_generate_is_deterministic_and_seed_sensitive():
    params = crypto.default_params(2, 4)
    assert generate(params, b"a") == generate(params, b"a")
    assert generate(params, b"a")[0] != generate(params, b"b")[0]


def test_zero_share_signs_zero():
    params = crypto.tiny_params()
    share = KeyShare(1, 0, 1)
    for msg in (b"x", b"another message"):
        assert partial_sign(msg, share, params).sigma == 0


def test_partial_sign_is_deterministic():
    params = crypto.default_params(2, 3)
    _, shares = generate(params, 5)
    assert partial_sign(b"42", shares[1], params) == partial_sign(b"42", shares[1], params)


def test_partial_round_trip_random_pairs():
    rng = np.random.default_rng(2024)
    for k in range(100):
        n = int(rng.integers(1, 7))
        t = int(rng.integers(1, n + 1))
        params = crypto.default_params(t, n)
        _, shares = generate(params, k)
        share = shares[int(rng.integers(0, n))]
        msg = rng.bytes(int(rng.integers(0, 40)))
        assert verify_partial(partial_sign(msg, share, params), share.public, msg, params)


def test_partial_rejects_tampering():
    params = crypto.default_params(2, 3)
    _, shares = generate(params, 9)
    ps = partial_sign(b"1700", shares[0], params)
    pk = shares[0].public
    assert verify_partial(ps, pk, b"1700", params)
    assert not verify_partial(PartialSignature(ps.index, ps.sigma + 1, ps.digest), pk, b"1700", params)
    assert not verify_partial(ps, pk, b"1701", params)
    assert not verify_partial(ps, shares[1].public, b"1700", params)


def test_hash_never_zero():
    q = crypto.TINY_Q
    for k in itertools.count():
        msg = b"probe-%d" % k
        if int.from_bytes(hashlib.sha256(msg).digest(), "big") % q == 0:
            break
    rehash = int.from_bytes(hashlib.sha256(msg + b"\x00").digest(), "big") % q
    assert rehash != 0  # holds for the message found above
    assert hash_to_scalar(msg, q) == rehash


def test_aggregate_all_three_subsets_of_five():
    params = crypto.default_params(3, 5)
    gk, shares = generate(params, b"t3n5")
    msg = b"23.5"
    psigs = [partial_sign(msg, s, params) for s in shares]
    sigmas = set()
    for subset in itertools.combinations(psigs, 3):
        sig = aggregate(subset, params, pubs(shares))
        assert verify(msg, gk, sig, params)
        assert sig.signers == tuple(ps.index for ps in subset)
        sigmas.add(sig.sigma)
    assert len(sigmas) == 1  # Lagrange subset independence


def test_aggregate_uses_lowest_indices():
    params = crypto.default_params(3, 5)
    _, shares = generate(params, b"low")
    psigs = [partial_sign(b"m", s, params) for s in reversed(shares)]
    assert aggregate(psigs, params, pubs(shares)).signers == (1, 2, 3)


def test_below_threshold_rejected():
    params = crypto.default_params(3, 5)
    _, shares = generate(params, b"two")
    psigs = [partial_sign(b"m", s, params) for s in shares]
    for pair in itertools.combinations(psigs, 2):
        with pytest.raises(ThresholdNotMetError):
            aggregate(pair, params, pubs(shares))


def test_duplicate_and_invalid_signers():
    params = crypto.default_params(2, 3)
    _, shares = generate(params, b"dup")
    a, b, c = (partial_sign(b"m", s, params) for s in shares)
    with pytest.raises(DuplicateSignerError):
        aggregate([a, a, b], params, pubs(shares))
    bad = PartialSignature(b.index, (b.sigma + 1) % params.q, b.digest)
    with pytest.raises(InvalidFragmentError) as info:
        aggregate([a, bad, c], params, pubs(shares))
    assert info.value.index == 2
    other = partial_sign(b"other", shares[2], params)
    with pytest.raises(InvalidFragmentError):
        aggregate([a, b, other], params, pubs(shares))


def test_one_of_one_is_the_partial():
    params = crypto.default_params(1, 1)
    gk, shares = generate(params, 77)
    ps = partial_sign(b"v", shares[0], params)
    sig = aggregate([ps], params, pubs(shares))
    assert sig.sigma == ps.sigma
    assert verify(b"v", gk, sig, params)


@pytest.mark.parametrize("which", ["tiny", "default"])
def test_exhaustive_t_of_n_up_to_six(which):
    make = crypto.tiny_params if which == "tiny" else crypto.default_params
    for n in range(1, 7):
        for t in range(1, n + 1):
            params = make(t, n)
            gk, shares = generate(params, f"{t}-{n}")
            msg = b"%d/%d" % (t, n)
            psigs = [partial_sign(msg, s, params) for s in shares]
            sigmas = set()
            for subset in itertools.combinations(psigs, t):
                sig = aggregate(subset, params, pubs(shares))
                assert verify(msg, gk, sig, params)
                sigmas.add(sig.sigma)
                sub_pubs = {ps.index: shares[ps.index - 1].public for ps in subset}
                assert combine_public_shares(sub_pubs, params) == gk
            assert len(sigmas) == 1
            if t > 1:
                with pytest.raises(ThresholdNotMetError):
                    aggregate(psigs[: t - 1], params, pubs(shares))


def test_tiny_group_signature_matches_brute_force():
    params = crypto.tiny_params(3, 5)
    gk, shares = generate(params, b"bf")
    secret = brute_force_dlog(params.g, gk.value, params.p, params.q)
    msg = b"reading"
    sig = aggregate([partial_sign(msg, s, params) for s in shares[1:4]], params, pubs(shares))
    assert sig.sigma == secret * hash_to_scalar(msg, params.q) % params.q


def test_verify_rejects_wrong_message_and_foreign_keys():
    params = crypto.default_params(2, 3)
    gk, shares = generate(params, b"home")
    sig = aggregate([partial_sign(b"m", s, params) for s in shares[:2]], params, pubs(shares))
    assert verify(b"m", gk, sig, params)
    assert not verify(b"n", gk, sig, params)
    foreign = 0
    for seed in range(1000):
        other, _ = generate(params, seed)
        foreign += verify(b"m", other, sig, params)
    assert foreign == 0


def test_signing_session_is_single_use():
    params = crypto.default_params(2, 3)
    gk, shares = generate(params, b"once")
    session = SigningSession.from_shares(params, gk, shares)
    psigs = [partial_sign(b"m", s, params) for s in shares]
    sig = session.aggregate(psigs)
    assert session.verify(b"m", sig)
    with pytest.raises(KeyConsumedError):
        session.aggregate(psigs)


def test_leader_signatures():
    params = crypto.default_params()
    key = crypto.leader_keygen(b"leader-0", params)
    other = crypto.leader_keygen(b"leader-1", params)
    sig = crypto.leader_sign(b"package body", key, params)
    assert crypto.leader_sign(b"package body", key, params) == sig
    assert crypto.leader_verify(b"package body", sig, key.public, params)
    assert not crypto.leader_verify(b"package bodY", sig, key.public, params)
    assert not crypto.leader_verify(b"package body", sig, other.public, params)


def test_serialization_round_trips():
    params = crypto.default_params(2, 3)
    gk, shares = generate(params, b"wire")
    ps = partial_sign(b"m", shares[0], params)
    sig = aggregate([partial_sign(b"m", s, params) for s in shares], params, pubs(shares))
    assert GroupKey.from_bytes(gk.to_bytes()) == gk
    assert KeyShare.from_bytes(shares[2].to_bytes()) == shares[2]
    assert PartialSignature.from_bytes(ps.to_bytes()) == ps
    assert GroupSignature.from_bytes(sig.to_bytes()) == sig
    # tag byte, two-byte big-endian length, big-endian payload
    raw = gk.to_bytes()
    assert raw[0] == 0x10
    assert int.from_bytes(raw[1:3], "big") == len(raw) - 3
    assert int.from_bytes(raw[3:], "big") == gk.value


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 6), data=st.data(), seed=st.binary(max_size=8), msg=st.binary(max_size=32))
def test_property_completeness_on_tiny_group(n, data, seed, msg):
    t = data.draw(st.integers(1, n))
    params = crypto.tiny_params(t, n)
    gk, shares = generate(params, seed)
    subset = data.draw(st.lists(st.sampled_from(shares), min_size=t, max_size=n, unique_by=lambda s: s.index))
    sig = aggregate([partial_sign(msg, s, params) for s in subset], params, pubs(shares))
    assert verify(msg, gk, sig, params)
