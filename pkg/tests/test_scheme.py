from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heact.ckks import scheme as S
from heact.ckks.params import PRESETS, CkksParams, preset
from heact.errors import (
    CapacityError,
    DepthError,
    ParameterError,
    RotationKeyError,
    ScaleError,
    StateError,
)


def enc(keys, v, seed=0):
    return S.encrypt(keys.public, S.encode(v, keys.params), seed)


def dec(keys, ct, n=None):
    out = S.decode(S.decrypt(keys.secret, ct))
    return out if n is None else out[:n]


# ---------------------------------------------------------------- params


def test_presets():
    p = preset("cifar10-paper")
    assert (p.ring_dim, p.coeff_mod_bits, p.scale_log2, p.slots) == (8192, (60, 40, 40, 60), 40, 4096)
    p = preset("cifar100-paper")
    assert (p.ring_dim, p.coeff_mod_bits, p.scale_log2) == (16384, (60, 40, 60), 40)
    p = preset("ci-small")
    assert (p.ring_dim, p.coeff_mod_bits, p.scale_log2) == (1024, (40, 30, 40), 30)
    with pytest.raises(ParameterError, match="available"):
        preset("huge")
    for p in PRESETS.values():
        for q, b in zip(p.primes, p.coeff_mod_bits):
            assert q.bit_length() == b and (q - 1) % (2 * p.ring_dim) == 0


@pytest.mark.parametrize(
    "kw",
    [
        dict(ring_dim=3000, coeff_mod_bits=(60, 40, 60), scale_log2=40),
        dict(ring_dim=1024, coeff_mod_bits=(60,), scale_log2=40),
        dict(ring_dim=1024, coeff_mod_bits=(60, 20, 60), scale_log2=20),
        dict(ring_dim=1024, coeff_mod_bits=(60, 40, 60), scale_log2=45),
    ],
)
def test_bad_params(kw):
    with pytest.raises(ParameterError):
        CkksParams(**kw)


# ---------------------------------------------------------------- keys


def test_keygen_deterministic(small_params):
    a, b = S.keygen(small_params, 5), S.keygen(small_params, 5)
    assert np.array_equal(a.secret.coeffs, b.secret.coeffs)
    assert np.array_equal(a.public.b, b.public.b)
    assert np.array_equal(a.relin_key.data, b.relin_key.data)
    for step in a.galois_keys:
        assert np.array_equal(a.galois_keys[step].data, b.galois_keys[step].data)
    c = S.keygen(small_params, 6)
    assert not np.array_equal(a.secret.coeffs, c.secret.coeffs)


def test_secret_is_ternary(small_keys, small_params):
    s = small_keys.secret.coeffs
    assert set(np.unique(s).tolist()) <= {-1, 0, 1}
    weight = np.count_nonzero(s) / small_params.ring_dim
    assert 0.6 < weight < 0.74
    assert sorted(small_keys.galois_keys) == [1 << j for j in range(9)]


def test_paper_keygen(paper_keys):
    assert paper_keys.params.slots == 4096


# ---------------------------------------------------------------- encoding


def test_encode_zero_exact(small_params):
    assert np.all(S.decode(S.encode(np.zeros(8), small_params)) == 0)


def test_encode_roundtrip_scale_40():
    p = CkksParams(1024, (60, 40, 60), 40)
    v = np.random.default_rng(0).uniform(-1, 1, 64)
    out = S.decode(S.encode(v, p))[:64]
    assert np.max(np.abs(out - v)) < 1e-9


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=512))
def test_encode_roundtrip_bound(small_params, values):
    v = np.array(values)
    out = S.decode(S.encode(v, small_params))[: v.size]
    assert np.max(np.abs(out - v)) < 2.0 ** (-small_params.scale_log2 / 2)


def test_constant_encodes_to_constant(small_params):
    c = S.encode_coeffs(small_params, np.full(small_params.slots, 2.5), small_params.scale)[0]
    assert c[0] == round(2.5 * small_params.scale)
    assert np.max(np.abs(c[1:])) <= 1


def test_encode_errors(small_params):
    with pytest.raises(CapacityError):
        S.encode(np.zeros(small_params.slots + 1), small_params)
    with pytest.raises(ScaleError):
        S.encode([np.inf], small_params)
    with pytest.raises(ScaleError):
        S.encode([1e30], small_params)


# ---------------------------------------------------------------- encryption


def test_encrypt_roundtrip_small(small_keys):
    v = np.random.default_rng(1).uniform(-10, 10, 512)
    assert np.max(np.abs(dec(small_keys, enc(small_keys, v), 512) - v)) < 1e-3
    assert np.max(np.abs(dec(small_keys, enc(small_keys, np.zeros(16))))) < 1e-4


def test_encrypt_roundtrip_paper(paper_keys):
    v = np.random.default_rng(1).uniform(-10, 10, 512)
    assert np.max(np.abs(dec(paper_keys, enc(paper_keys, v), 512) - v)) < 1e-5
    assert np.max(np.abs(dec(paper_keys, enc(paper_keys, np.zeros(64))))) < 1e-6


def test_wrong_key_decrypts_to_noise(small_keys, small_params):
    other = S.keygen(small_params, 99)
    v = np.random.default_rng(2).uniform(-1, 1, small_params.slots)
    ct = enc(small_keys, v)
    out = S.decode(S.decrypt(other.secret, ct))
    assert abs(np.corrcoef(out, v)[0, 1]) < 0.2
    assert np.max(np.abs(out - v)) > 1.0


def test_encryption_deterministic(small_keys):
    a = S.Encryptor(small_keys.public, 3).encrypt_values([1.0, 2.0])
    b = S.Encryptor(small_keys.public, 3).encrypt_values([1.0, 2.0])
    c = S.Encryptor(small_keys.public, 4).encrypt_values([1.0, 2.0])
    assert np.array_equal(a.parts, b.parts)
    assert not np.array_equal(a.parts, c.parts)


def test_encrypt_requires_top_level(small_keys, small_params):
    pt = S.encode([1.0], small_params, level=0)
    with pytest.raises(StateError):
        S.encrypt(small_keys.public, pt, 0)


def test_decrypt_values_batch(small_keys):
    cts = [enc(small_keys, [float(i)], i) for i in range(3)]
    out = S.decrypt_values(small_keys.secret, cts)
    np.testing.assert_allclose(out[:, 0], [0, 1, 2], atol=1e-4)
    assert S.decrypt_values(small_keys.secret, cts, complex_slots=True).dtype == np.complex128


# ---------------------------------------------------------------- arithmetic


def test_add_and_sub(small_keys, small_params):
    rng = np.random.default_rng(4)
    a, b = rng.uniform(-1, 1, 256), rng.uniform(-1, 1, 256)
    ca, cb = enc(small_keys, a, 1), enc(small_keys, b, 2)
    assert np.max(np.abs(dec(small_keys, S.add(ca, enc(small_keys, -a, 3)), 256))) < 1e-4
    assert np.max(np.abs(dec(small_keys, S.sub(ca, cb), 256) - (a - b))) < 1e-3
    pt = S.encode(b, small_params)
    assert np.max(np.abs(dec(small_keys, S.add_plain(ca, pt), 256) - (a + b))) < 1e-3
    z = S.add(ca, enc(small_keys, np.zeros(256), 5))
    assert np.max(np.abs(dec(small_keys, z, 256) - a)) < 1e-3


def test_add_paper_cancellation(paper_keys):
    a = np.random.default_rng(4).uniform(-1, 1, 256)
    s = S.add(enc(paper_keys, a, 1), enc(paper_keys, -a, 2))
    assert np.max(np.abs(dec(paper_keys, s))) < 1e-5


def test_add_mismatch(small_keys, small_params):
    ct = enc(small_keys, [1.0])
    with pytest.raises(StateError):
        S.add_plain(ct, S.encode([1.0], small_params, scale=small_params.scale * 1.01))
    low = S.rescale(ct)
    with pytest.raises(StateError):
        S.add(ct, low)


def test_mul_plain(small_keys, small_params):
    rng = np.random.default_rng(5)
    a = rng.uniform(-1, 1, 256)
    ct = enc(small_keys, a)
    one = S.mul_plain(ct, S.encode(np.ones(small_params.slots), small_params))
    assert one.level == ct.level - 1
    assert abs(np.log2(one.scale) - small_params.scale_log2) < 1
    assert np.max(np.abs(dec(small_keys, one, 256) - a)) < 1e-3
    zero = S.mul_plain(ct, S.encode(np.zeros(small_params.slots), small_params))
    assert np.max(np.abs(dec(small_keys, zero))) < 1e-3
    with pytest.raises(DepthError):
        S.mul_plain(one, S.encode(a, small_params, scale=one.scale, level=one.level))


def test_mul_plain_paper(paper_keys, paper_params):
    rng = np.random.default_rng(6)
    a, b = rng.uniform(-1, 1, 256), rng.uniform(-1, 1, 256)
    out = S.mul_plain(enc(paper_keys, a), S.encode(b, paper_params))
    assert np.max(np.abs(dec(paper_keys, out, 256) - a * b)) < 1e-4
    assert out.level == paper_params.top_level - 1
    assert abs(np.log2(out.scale) - 40) < 1


def test_mul_and_depth_paper(paper_keys, paper_params):
    a = np.random.default_rng(7).uniform(-1, 1, 256)
    ca = enc(paper_keys, a, 1)
    ev = paper_keys.evaluation
    assert np.max(np.abs(dec(paper_keys, S.mul(ca, enc(paper_keys, np.ones(256), 2), ev), 256) - a)) < 1e-3
    sq = S.mul(ca, enc(paper_keys, a, 3), ev)
    assert np.max(np.abs(dec(paper_keys, sq, 256) - a * a)) < 1e-3
    assert sq.level == 1 and abs(np.log2(sq.scale) - 40) < 1
    quad = S.mul(sq, sq, ev)
    assert np.max(np.abs(dec(paper_keys, quad, 256) - a**4)) < 1e-3
    with pytest.raises(DepthError):
        S.mul(quad, quad, ev)


def test_mul_small(small_keys):
    a = np.random.default_rng(8).uniform(-1, 1, 64)
    out = S.mul(enc(small_keys, a, 1), enc(small_keys, a, 2), small_keys.evaluation)
    assert np.max(np.abs(dec(small_keys, out, 64) - a * a)) < 1e-2


# ---------------------------------------------------------------- rotations and dot products


def test_rotate(small_keys, small_params):
    ev = small_keys.evaluation
    slots = small_params.slots
    v = np.zeros(slots)
    v[:4] = [1, 2, 3, 4]
    ct = enc(small_keys, v)
    assert np.max(np.abs(dec(small_keys, S.rotate(ct, 0, ev)) - v)) < 1e-3
    r1 = dec(small_keys, S.rotate(ct, 1, ev))
    assert np.max(np.abs(r1 - np.roll(v, -1))) < 1e-3
    for k in (3, 100, 511):
        back = S.rotate(S.rotate(ct, k, ev), slots - k, ev)
        assert np.max(np.abs(dec(small_keys, back) - v)) < 1e-3
        assert np.max(np.abs(dec(small_keys, S.rotate(ct, k, ev)) - np.roll(v, -k))) < 1e-3


def test_rotate_missing_key(small_keys, small_params):
    ev = small_keys.evaluation
    bare = S.EvaluationKeys(small_params, ev.public, ev.relin, {})
    with pytest.raises(RotationKeyError):
        S.rotate(enc(small_keys, [1.0]), 1, bare)


def test_dot_plain(small_keys, small_params):
    ev = small_keys.evaluation
    d = 256
    ones = S.dot_plain(enc(small_keys, np.ones(d)), np.ones(d), d, ev)
    assert ones.level == small_params.top_level - 1
    assert abs(dec(small_keys, ones, 1)[0] - d) < 1e-3 * d
    x = np.random.default_rng(9).uniform(-1, 1, d)
    e = np.zeros(d)
    e[17] = 1.0
    assert abs(dec(small_keys, S.dot_plain(enc(small_keys, x), e, d, ev), 1)[0] - x[17]) < 1e-3
    # not a power of two: zero padded internally
    x3 = x[:100]
    w3 = np.random.default_rng(10).uniform(-1, 1, 100)
    got = dec(small_keys, S.dot_plain(enc(small_keys, x3), w3, 100, ev), 1)[0]
    assert abs(got - x3 @ w3) < 1e-2
    with pytest.raises(CapacityError):
        S.dot_plain(enc(small_keys, x), np.ones(3), 4, ev)


def test_dot_plain_paper(paper_keys):
    rng = np.random.default_rng(11)
    x, w = rng.uniform(-1, 1, 512), rng.uniform(-1, 1, 512)
    out = S.dot_plain(enc(paper_keys, x), w, 512, paper_keys.evaluation)
    assert abs(dec(paper_keys, out, 1)[0] - x @ w) < 1e-3


def test_dot_plain_many_matches_single(small_keys):
    rng = np.random.default_rng(12)
    x = rng.uniform(-1, 1, 64)
    w = rng.uniform(-1, 1, (5, 64))
    ct = enc(small_keys, x)
    many = S.dot_plain_many(ct, w, small_keys.evaluation)
    got = S.decrypt_values(small_keys.secret, many)[:, 0]
    np.testing.assert_allclose(got, w @ x, atol=1e-2)
    biased = S.add_plain_scalars(many, np.arange(5.0))
    got_b = S.decrypt_values(small_keys.secret, biased)[:, 0]
    np.testing.assert_allclose(got_b, w @ x + np.arange(5.0), atol=1e-2)


# ---------------------------------------------------------------- properties


def _homomorphism(keys, a, b, tol):
    params = keys.params
    ca, cb = enc(keys, a, 1), enc(keys, b, 2)
    n = a.size
    assert np.max(np.abs(dec(keys, S.add(ca, cb), n) - (a + b))) < tol
    assert np.max(np.abs(dec(keys, S.mul_plain(ca, S.encode(b, params)), n) - a * b)) < tol
    assert np.max(np.abs(dec(keys, S.mul(ca, cb, keys.evaluation), n) - a * b)) < tol
    rot = dec(keys, S.rotate(ca, 1, keys.evaluation))
    full = np.zeros(params.slots)
    full[:n] = a
    assert np.max(np.abs(rot - np.roll(full, -1))) < tol


_vec = st.lists(st.floats(-1, 1), min_size=2, max_size=64).map(np.array)


@settings(max_examples=10, deadline=None)
@given(_vec, st.data())
def test_homomorphism_small(small_keys, a, data):
    b = np.array(data.draw(st.lists(st.floats(-1, 1), min_size=a.size, max_size=a.size)))
    _homomorphism(small_keys, a, b, 1e-2)


@pytest.mark.extended
@settings(max_examples=10, deadline=None)
@given(_vec, st.data())
def test_homomorphism_paper(paper_keys, a, data):
    b = np.array(data.draw(st.lists(st.floats(-1, 1), min_size=a.size, max_size=a.size)))
    _homomorphism(paper_keys, a, b, 1e-4)


@pytest.mark.extended
def test_cifar100_preset_roundtrip():
    p = preset("cifar100-paper")
    keys = S.keygen(p, 1)
    v = np.random.default_rng(0).uniform(-10, 10, 512)
    assert np.max(np.abs(dec(keys, enc(keys, v), 512) - v)) < 1e-5
    out = S.dot_plain(enc(keys, v / 10), np.ones(512) / 512, 512, keys.evaluation)
    assert abs(dec(keys, out, 1)[0] - v.mean() / 10) < 1e-3
