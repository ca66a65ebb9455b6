"""Leveled CKKS: keys, encoding, encryption and homomorphic operations.

Research-grade only. Nothing here is constant time, the security level of
the presets is not independently estimated, and there is no bootstrapping.

Conventions:

* Ring elements are stored in NTT form, one row per active prime, so a
  ciphertext at level ``l`` has ``parts`` of shape ``(k, l + 1, N)``.
* The last prime of the chain is the special prime ``P``. Key switching uses
  one RNS digit per data prime, lifts into ``Q_l * P`` and divides by ``P``.
* Slot ``k`` holds the value at the root ``zeta^(5^k)``; rotating left by
  ``r`` applies ``X -> X^(5^r)``.
* Every multiplication is followed by a rescale, and plaintext operands are
  encoded at the ciphertext's current scale.
"""

from __future__ import annotations

import functools
import itertools
import threading
from dataclasses import dataclass, field

import numpy as np

from heact.ckks.params import CkksParams
from heact.ckks.ring import (
    RingPoly,
    add_rows,
    key_switch_batch,
    mul_bcast,
    mul_rescale_batch,
    neg_rows,
    rescale_batch,
    rotate_batch,
    sub_rows,
    to_mont,
)
from heact.errors import (
    CapacityError,
    DepthError,
    RotationKeyError,
    ScaleError,
    StateError,
)

ERROR_STDDEV = 3.2
ERROR_BOUND = 19  # tail cut at ~6 sigma
SCALE_RTOL = 2.0**-20
_BATCH_ELEMS = 1 << 21  # cap on uint64 elements per dot-product chunk


# ---------------------------------------------------------------- sampling


def _ternary(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(-1, 2, size=n, dtype=np.int64)


def _gaussian(rng: np.random.Generator, n: int) -> np.ndarray:
    e = np.rint(rng.normal(0.0, ERROR_STDDEV, size=n))
    return np.clip(e, -ERROR_BOUND, ERROR_BOUND).astype(np.int64)


def _uniform(rng: np.random.Generator, params: CkksParams, pidx) -> np.ndarray:
    primes = params.primes
    return np.stack(
        [rng.integers(0, primes[k], size=params.ring_dim, dtype=np.uint64) for k in pidx]
    )


def _small_ntt(params: CkksParams, coeffs: np.ndarray, pidx) -> np.ndarray:
    ring = params.ring
    return ring.ntt(ring.from_ints(coeffs, pidx), pidx)


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# ---------------------------------------------------------------- key types


@dataclass(frozen=True, eq=False)
class SecretKey:
    params: CkksParams
    coeffs: np.ndarray  # (N,) int8 in {-1, 0, 1}
    ntt: np.ndarray  # (chain length, N), every prime including P

    def poly(self, level: int | None = None) -> RingPoly:
        level = self.params.top_level if level is None else level
        return RingPoly.from_ints(self.params.ring, self.coeffs.astype(np.int64), level)


@dataclass(frozen=True, eq=False)
class PublicKey:
    params: CkksParams
    b: np.ndarray  # (top_level + 1, N)
    a: np.ndarray


@dataclass(frozen=True, eq=False)
class KeySwitchKey:
    """Encryptions of ``P * g_i * t`` under ``s`` for each data prime ``i``.

    ``data`` has shape ``(digits, 2, chain length, N)``.
    """

    params: CkksParams
    data: np.ndarray

    @functools.cached_property
    def mont(self) -> np.ndarray:
        """The key in Montgomery form, as the switching kernel consumes it."""
        digits, _, rows, n = self.data.shape
        pidx = list(range(rows)) * (2 * digits)
        flat = to_mont(self.params.ring, self.data.reshape(-1, n), pidx)
        return flat.reshape(self.data.shape)


@dataclass(frozen=True, eq=False)
class EvaluationKeys:
    """Everything the evaluating party may hold: no secret material."""

    params: CkksParams
    public: PublicKey
    relin: KeySwitchKey
    galois: dict[int, KeySwitchKey]  # rotation step -> key

    def rotation_key(self, step: int) -> KeySwitchKey:
        try:
            return self.galois[step]
        except KeyError:
            raise RotationKeyError(f"no rotation key for step {step}") from None


@dataclass(frozen=True, eq=False)
class KeySet:
    secret: SecretKey
    evaluation: EvaluationKeys

    @property
    def params(self) -> CkksParams:
        return self.secret.params

    @property
    def public(self) -> PublicKey:
        return self.evaluation.public

    @property
    def relin_key(self) -> KeySwitchKey:
        return self.evaluation.relin

    @property
    def galois_keys(self) -> dict[int, KeySwitchKey]:
        return self.evaluation.galois


@dataclass(frozen=True, eq=False)
class Plaintext:
    params: CkksParams
    data: np.ndarray  # (level + 1, N) NTT form
    scale: float
    level: int

    def __post_init__(self):
        if not self.scale > 0:
            raise ScaleError("plaintext scale must be positive")

    @property
    def poly(self) -> RingPoly:
        ring = self.params.ring
        pidx = range(self.level + 1)
        return RingPoly(ring, ring.intt(self.data, pidx), self.level)


@dataclass(frozen=True, eq=False)
class Ciphertext:
    params: CkksParams
    parts: np.ndarray  # (2 or 3, level + 1, N) NTT form
    scale: float
    level: int

    @property
    def size(self) -> int:
        return self.parts.shape[0]

    def polys(self) -> list[RingPoly]:
        ring = self.params.ring
        pidx = range(self.level + 1)
        return [RingPoly(ring, ring.intt(p, pidx), self.level) for p in self.parts]


# ---------------------------------------------------------------- keygen


def galois_element(params: CkksParams, step: int) -> int:
    return pow(5, step % params.slots, 2 * params.ring_dim)


def rotation_steps(params: CkksParams) -> list[int]:
    """Power-of-two steps below the slot count; all others are composed."""
    return [1 << j for j in range(params.slots.bit_length() - 1)]


def _key_switch_key(params, rng, s_ntt, target_ntt) -> KeySwitchKey:
    ring = params.ring
    total = len(params.primes)
    allp = list(range(total))
    digits = params.top_level + 1
    p_special = params.primes[params.special_index]
    data = np.empty((digits, 2, total, params.ring_dim), dtype=np.uint64)
    mod = ring.column(allp)
    for i in range(digits):
        a = _uniform(rng, params, allp)
        e = _small_ntt(params, _gaussian(rng, params.ring_dim), allp)
        b = add_rows(neg_rows(ring.mul(a, s_ntt, allp), mod), e, mod)
        # gadget term P * g_i is P mod q_i on row i and 0 on every other row
        gadget = ring.mul_const(target_ntt[i : i + 1], [p_special % params.primes[i]], [i])
        b[i] = add_rows(b[i : i + 1], gadget, mod[i : i + 1])[0]
        data[i, 0] = b
        data[i, 1] = a
    return KeySwitchKey(params, data)


def keygen(params: CkksParams, seed: int) -> KeySet:
    """Generate secret, public, relinearization and rotation keys.

    Deterministic in ``seed``. The secret is uniform ternary, so about
    two thirds of its coefficients are nonzero.
    """
    rng = np.random.default_rng(seed)
    n = params.ring_dim
    ring = params.ring
    allp = list(range(len(params.primes)))
    data = list(range(params.top_level + 1))

    s = _ternary(rng, n)
    s_ntt = _small_ntt(params, s, allp)
    sk = SecretKey(params, s.astype(np.int8), s_ntt)

    a = _uniform(rng, params, data)
    e = _small_ntt(params, _gaussian(rng, n), data)
    mod = ring.column(data)
    b = add_rows(neg_rows(ring.mul(a, s_ntt[: len(data)], data), mod), e, mod)
    pk = PublicKey(params, b, a)

    s2 = ring.mul(s_ntt, s_ntt, allp)
    relin = _key_switch_key(params, rng, s_ntt, s2)
    galois = {}
    for step in rotation_steps(params):
        perm = ring.galois_permutation(galois_element(params, step))
        galois[step] = _key_switch_key(params, rng, s_ntt, s_ntt[:, perm])
    return KeySet(sk, EvaluationKeys(params, pk, relin, galois))


# ---------------------------------------------------------------- encoding


@functools.lru_cache(maxsize=None)
def _embedding(n: int):
    two_n = 2 * n
    rot = np.array([pow(5, k, two_n) for k in range(n // 2)], dtype=np.int64)
    slot_idx = (rot - 1) // 2
    conj_idx = (two_n - rot - 1) // 2
    twist = np.exp(1j * np.pi * np.arange(n) / n)
    return slot_idx, conj_idx, twist


def _modulus_bits(params: CkksParams, level: int) -> float:
    return float(sum(np.log2(float(p)) for p in params.primes[: level + 1]))


def encode_coeffs(params: CkksParams, values: np.ndarray, scale: float) -> np.ndarray:
    """Rounded integer coefficients (int64) for a batch of real slot vectors."""
    n = params.ring_dim
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if values.shape[1] > params.slots:
        raise CapacityError(f"{values.shape[1]} values exceed {params.slots} slots")
    if not np.all(np.isfinite(values)):
        raise ScaleError("cannot encode non-finite values")
    slot_idx, conj_idx, twist = _embedding(n)
    k = values.shape[1]
    ev = np.zeros((values.shape[0], n), dtype=np.complex128)
    ev[:, slot_idx[:k]] = values
    ev[:, conj_idx[:k]] = values
    coeffs = (np.fft.fft(ev, axis=1) / n * twist.conj()).real * scale
    biggest = float(np.max(np.abs(coeffs))) if coeffs.size else 0.0
    if biggest >= 2.0**62:
        raise ScaleError(f"encoded coefficient {biggest:.3g} overflows 62 bits")
    return np.rint(coeffs).astype(np.int64)


def _coeffs_to_ntt(params: CkksParams, coeffs: np.ndarray, level: int) -> np.ndarray:
    """(B, N) int64 -> (B, level + 1, N) NTT-form residues."""
    ring = params.ring
    pidx = list(range(level + 1))
    batch = coeffs.shape[0]
    out = np.empty((batch, level + 1, params.ring_dim), dtype=np.uint64)
    for r, k in enumerate(pidx):
        out[:, r] = np.mod(coeffs, np.int64(params.primes[k])).astype(np.uint64)
    ring.ntt_inplace(out.reshape(-1, params.ring_dim), pidx * batch)
    return out


def encode(values, params: CkksParams, scale: float | None = None, level: int | None = None) -> Plaintext:
    """Canonical-embedding encoding of up to ``N/2`` reals into a plaintext."""
    scale = params.scale if scale is None else float(scale)
    level = params.top_level if level is None else level
    values = np.asarray(values, dtype=np.float64).reshape(1, -1)
    coeffs = encode_coeffs(params, values, scale)
    biggest = float(np.max(np.abs(coeffs))) if coeffs.size else 0.0
    if biggest > 0 and np.log2(biggest) >= _modulus_bits(params, level) - 1:
        raise ScaleError(f"scaled values overflow the level-{level} modulus")
    return Plaintext(params, _coeffs_to_ntt(params, coeffs, level)[0], scale, level)


def encode_many(values: np.ndarray, params: CkksParams, scale: float, level: int) -> np.ndarray:
    """Encode each row of ``values``; returns stacked NTT data (B, level + 1, N)."""
    return _coeffs_to_ntt(params, encode_coeffs(params, values, scale), level)


def _decode_base(params: CkksParams, rows: np.ndarray, scale: float) -> np.ndarray:
    """Complex slots from coefficient-form residues modulo the base prime."""
    q0 = np.uint64(params.primes[0])
    rows = np.atleast_2d(rows)
    centered = np.where(rows > (q0 >> np.uint64(1)), -(q0 - rows).astype(np.int64), rows.astype(np.int64))
    slot_idx, _, twist = _embedding(params.ring_dim)
    n = params.ring_dim
    ev = np.fft.ifft(centered.astype(np.float64) / scale * twist, axis=1) * n
    return ev[:, slot_idx]


def decode(pt: Plaintext, complex_slots: bool = False) -> np.ndarray:
    """Inverse of :func:`encode`. Returns all ``N/2`` slots."""
    params = pt.params
    ring = params.ring
    if pt.level == 0:
        coeff = ring.intt(pt.data, [0])
        z = _decode_base(params, coeff, pt.scale)[0]
    else:
        ints = ring.to_ints(ring.intt(pt.data, range(pt.level + 1)), range(pt.level + 1))
        slot_idx, _, twist = _embedding(params.ring_dim)
        c = np.array([float(v) for v in ints]) / pt.scale
        z = (np.fft.ifft(c * twist) * params.ring_dim)[slot_idx]
    return z if complex_slots else z.real


# ---------------------------------------------------------------- encryption


def encrypt(pk: PublicKey, pt: Plaintext, seed) -> Ciphertext:
    """Public-key encryption of a top-level plaintext.

    ``seed`` is an int, a seed sequence entropy tuple, or a Generator; all
    randomness is drawn from it.
    """
    params = pk.params
    if pt.level != params.top_level:
        raise StateError(f"fresh encryption needs a top-level plaintext, got level {pt.level}")
    rng = _rng(seed)
    ring = params.ring
    n = params.ring_dim
    data = list(range(pt.level + 1))
    mod = ring.column(data)
    u = _small_ntt(params, _ternary(rng, n), data)
    e0 = _small_ntt(params, _gaussian(rng, n), data)
    e1 = _small_ntt(params, _gaussian(rng, n), data)
    c0 = add_rows(add_rows(ring.mul(u, pk.b, data), e0, mod), pt.data, mod)
    c1 = add_rows(ring.mul(u, pk.a, data), e1, mod)
    return Ciphertext(params, np.stack([c0, c1]), pt.scale, pt.level)


class Encryptor:
    """Deterministic encryption stream: call ``i`` uses entropy ``(seed, i)``.

    Reproducible only when calls happen in a fixed order; give each thread
    its own ``Encryptor`` (or sub-seed) otherwise.
    """

    def __init__(self, pk: PublicKey, seed: int):
        self.pk = pk
        self.seed = int(seed)
        self._counter = itertools.count()
        self._lock = threading.Lock()

    def encrypt(self, pt: Plaintext) -> Ciphertext:
        with self._lock:
            i = next(self._counter)
        return encrypt(self.pk, pt, np.random.default_rng([self.seed, i]))

    def encrypt_values(self, values) -> Ciphertext:
        return self.encrypt(encode(values, self.pk.params))


def _decrypt_base(sk: SecretKey, parts: np.ndarray) -> np.ndarray:
    """Base-prime coefficients of ``c0 + c1 s (+ c2 s^2)`` for stacked parts.

    ``parts`` is ``(B, k, rows, N)``. Dropping to the base prime is exact as
    long as ``scale * |message|`` stays below ``q0 / 2``.
    """
    params = sk.params
    ring = params.ring
    batch, k = parts.shape[:2]
    s0 = sk.ntt[0:1]
    mod = ring.column([0])
    acc = parts[:, 0, 0].copy()
    s_pow = s0
    for j in range(1, k):
        prod = mul_bcast(ring, parts[:, j, 0:1], s_pow, [0])[:, 0]
        acc = add_rows(acc, prod, mod)
        if j + 1 < k:
            s_pow = ring.mul(s_pow, s0, [0])
    ring.intt_inplace(acc, [0] * batch)
    return acc


def decrypt(sk: SecretKey, ct: Ciphertext) -> Plaintext:
    """Decrypt to a base-level plaintext (see :func:`_decrypt_base`)."""
    coeff = _decrypt_base(sk, ct.parts[None])
    data = sk.params.ring.ntt(coeff, [0])
    return Plaintext(sk.params, data, ct.scale, 0)


def decrypt_values(sk: SecretKey, cts: list[Ciphertext], complex_slots: bool = False) -> np.ndarray:
    """Decrypt and decode several ciphertexts at once; returns ``(len, slots)``."""
    params = sk.params
    out = np.empty((len(cts), params.slots), dtype=np.complex128)
    groups: dict[tuple[int, int, float], list[int]] = {}
    for i, ct in enumerate(cts):
        groups.setdefault((ct.level, ct.size, ct.scale), []).append(i)
    for (level, size, scale), idx in groups.items():
        parts = np.stack([cts[i].parts for i in idx])
        out[idx] = _decode_base(params, _decrypt_base(sk, parts), scale)
    return out if complex_slots else out.real


# ---------------------------------------------------------------- arithmetic


def _check_pair(a_level: int, b_level: int, a_scale: float, b_scale: float) -> None:
    if a_level != b_level:
        raise StateError(f"level mismatch: {a_level} vs {b_level}")
    if abs(a_scale - b_scale) > SCALE_RTOL * max(a_scale, b_scale):
        raise StateError(f"scale mismatch: 2^{np.log2(a_scale):.6f} vs 2^{np.log2(b_scale):.6f}")


def add(a: Ciphertext, b: Ciphertext) -> Ciphertext:
    _check_pair(a.level, b.level, a.scale, b.scale)
    if a.size != b.size:
        raise StateError("cannot add ciphertexts of different sizes")
    mod = a.params.ring.column(range(a.level + 1))
    return Ciphertext(a.params, add_rows(a.parts, b.parts, mod), a.scale, a.level)


def sub(a: Ciphertext, b: Ciphertext) -> Ciphertext:
    _check_pair(a.level, b.level, a.scale, b.scale)
    if a.size != b.size:
        raise StateError("cannot subtract ciphertexts of different sizes")
    mod = a.params.ring.column(range(a.level + 1))
    return Ciphertext(a.params, sub_rows(a.parts, b.parts, mod), a.scale, a.level)


def add_plain(ct: Ciphertext, pt: Plaintext) -> Ciphertext:
    _check_pair(ct.level, pt.level, ct.scale, pt.scale)
    mod = ct.params.ring.column(range(ct.level + 1))
    parts = ct.parts.copy()
    parts[0] = add_rows(parts[0], pt.data, mod)
    return Ciphertext(ct.params, parts, ct.scale, ct.level)


def _inv_constants(params: CkksParams, divisor_index: int, level: int) -> list[int]:
    d = params.primes[divisor_index]
    return [pow(d, -1, params.primes[j]) for j in range(level + 1)]


def _rescale_parts(params: CkksParams, parts: np.ndarray, level: int) -> np.ndarray:
    """Divide by the top prime ``q_level``: ``(..., level + 1, N) -> (..., level, N)``."""
    n = params.ring_dim
    lead = parts.shape[:-2]
    out = rescale_batch(params.ring, parts.reshape(-1, level + 1, n))
    return out.reshape(*lead, level, n)


def rescale(ct: Ciphertext) -> Ciphertext:
    if ct.level == 0:
        raise DepthError("no levels left to rescale into")
    parts = _rescale_parts(ct.params, ct.parts, ct.level)
    return Ciphertext(ct.params, parts, ct.scale / ct.params.primes[ct.level], ct.level - 1)


def _check_product_scale(params: CkksParams, level: int, scale: float) -> None:
    if level == 0:
        raise DepthError("multiplicative depth exhausted: ciphertext is at level 0")
    if np.log2(scale) >= _modulus_bits(params, level) - 1:
        raise ScaleError(f"product scale 2^{np.log2(scale):.1f} exceeds the level-{level} modulus")


def mul_plain(ct: Ciphertext, pt: Plaintext) -> Ciphertext:
    """Slotwise product with a plaintext, rescaled by one level."""
    if ct.level != pt.level:
        raise StateError(f"level mismatch: {ct.level} vs {pt.level}")
    _check_product_scale(ct.params, ct.level, ct.scale * pt.scale)
    ring = ct.params.ring
    parts = mul_bcast(ring, ct.parts, pt.data, range(ct.level + 1))
    prod = Ciphertext(ct.params, parts, ct.scale * pt.scale, ct.level)
    return rescale(prod)


def _key_switch(params: CkksParams, d: np.ndarray, level: int, ksk: KeySwitchKey) -> np.ndarray:
    """Switch NTT-form polynomials ``d`` (B, level + 1, N) to the secret ``s``.

    Returns ``(2, B, level + 1, N)``; adding part 0 to ``c0`` finishes the job.
    """
    return key_switch_batch(params.ring, d, ksk.mont, params.special_index)


def relinearize(ct: Ciphertext, keys: EvaluationKeys) -> Ciphertext:
    if ct.size == 2:
        return ct
    params = ct.params
    ks = _key_switch(params, ct.parts[2][None], ct.level, keys.relin)
    mod = params.ring.column(range(ct.level + 1))
    c0 = add_rows(ct.parts[0], ks[0, 0], mod)
    c1 = add_rows(ct.parts[1], ks[1, 0], mod)
    return Ciphertext(params, np.stack([c0, c1]), ct.scale, ct.level)


def mul(a: Ciphertext, b: Ciphertext, keys: EvaluationKeys) -> Ciphertext:
    """Ciphertext product, relinearized to two parts and rescaled."""
    if a.level != b.level:
        raise StateError(f"level mismatch: {a.level} vs {b.level}")
    if a.size != 2 or b.size != 2:
        raise StateError("multiply relinearized ciphertexts only")
    params = a.params
    _check_product_scale(params, a.level, a.scale * b.scale)
    ring = params.ring
    pidx = list(range(a.level + 1))
    mod = ring.column(pidx)
    d0 = ring.mul(a.parts[0], b.parts[0], pidx)
    d1 = add_rows(ring.mul(a.parts[0], b.parts[1], pidx), ring.mul(a.parts[1], b.parts[0], pidx), mod)
    d2 = ring.mul(a.parts[1], b.parts[1], pidx)
    prod = Ciphertext(params, np.stack([d0, d1, d2]), a.scale * b.scale, a.level)
    return rescale(relinearize(prod, keys))


def _rotate_parts(
    params: CkksParams, parts: np.ndarray, level: int, step: int, keys: EvaluationKeys,
    accumulate: bool = False,
) -> np.ndarray:
    """Rotate a stack ``(B, 2, level + 1, N)`` left by a power-of-two step.

    With ``accumulate`` each input is added to its own rotation.
    """
    ring = params.ring
    key = keys.rotation_key(step)
    perm = ring.galois_permutation(galois_element(params, step))
    return rotate_batch(ring, parts, perm, key.mont, params.special_index, accumulate)


def _power_of_two_steps(params: CkksParams, k: int) -> list[int]:
    k %= params.slots
    return [1 << j for j in range(k.bit_length()) if k >> j & 1]


def rotate(ct: Ciphertext, k: int, keys: EvaluationKeys) -> Ciphertext:
    """Cyclic left rotation of the slot vector by ``k``."""
    if ct.size != 2:
        raise StateError("relinearize before rotating")
    parts = ct.parts[None]
    for step in _power_of_two_steps(ct.params, k):
        parts = _rotate_parts(ct.params, parts, ct.level, step, keys)
    return Ciphertext(ct.params, parts[0], ct.scale, ct.level)


def _sum_slots_parts(params: CkksParams, parts: np.ndarray, level: int, width: int, keys: EvaluationKeys) -> np.ndarray:
    """Rotate-and-add tree: slot 0 ends up with the sum of the first ``width`` slots."""
    step = 1
    while step < width:
        parts = _rotate_parts(params, parts, level, step, keys, accumulate=True)
        step <<= 1
    return parts


def _padded_width(params: CkksParams, d: int) -> int:
    width = 1 << max(0, (d - 1).bit_length())
    if width > params.slots:
        raise CapacityError(f"dot product of length {d} exceeds {params.slots} slots")
    return width


def dot_plain(ct: Ciphertext, w, d: int, keys: EvaluationKeys) -> Ciphertext:
    """Encrypted-plaintext inner product; the result sits in slot 0.

    Costs one level (one ``mul_plain``) plus ``log2(d)`` rotations; ``d`` is
    zero-padded up to a power of two.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (d,):
        raise CapacityError(f"weight vector has shape {w.shape}, expected ({d},)")
    return dot_plain_many(ct, w[None, :], keys)[0]


@dataclass(frozen=True, eq=False)
class PlainMatrix:
    """Weight rows pre-encoded for one ciphertext level and scale."""

    params: CkksParams
    data: np.ndarray  # (rows, level + 1, N)
    width: int
    scale: float
    level: int


def encode_matrix(params: CkksParams, weights: np.ndarray, scale: float, level: int) -> PlainMatrix:
    weights = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    width = _padded_width(params, weights.shape[1])
    return PlainMatrix(params, encode_many(weights, params, scale, level), width, scale, level)


def dot_plain_many(ct: Ciphertext, weights, keys: EvaluationKeys) -> list[Ciphertext]:
    """One :func:`dot_plain` per weight row, evaluated as a single batch."""
    params = ct.params
    if ct.size != 2:
        raise StateError("relinearize before dot products")
    if isinstance(weights, PlainMatrix):
        pm = weights
        if pm.level != ct.level:
            raise StateError(f"weights encoded for level {pm.level}, ciphertext at {ct.level}")
        _check_pair(ct.level, pm.level, ct.scale, pm.scale)
    else:
        pm = encode_matrix(params, weights, ct.scale, ct.level)
    _check_product_scale(params, ct.level, ct.scale * pm.scale)
    ring = params.ring
    rows = pm.data.shape[0]
    out_level = ct.level - 1
    out_scale = ct.scale * pm.scale / params.primes[ct.level]
    results = np.empty((rows, 2, out_level + 1, params.ring_dim), dtype=np.uint64)
    chunk = max(1, _BATCH_ELEMS // (2 * (ct.level + 1) * params.ring_dim))
    for lo in range(0, rows, chunk):
        hi = min(rows, lo + chunk)
        parts = mul_rescale_batch(ring, pm.data[lo:hi], ct.parts)
        results[lo:hi] = _sum_slots_parts(params, parts, out_level, pm.width, keys)
    return [Ciphertext(params, results[j], out_scale, out_level) for j in range(rows)]


def add_plain_scalars(cts: list[Ciphertext], values) -> list[Ciphertext]:
    """Add ``values[j]`` to every slot of ``cts[j]`` (bias addition).

    A constant slot vector encodes to a constant polynomial, whose NTT form is
    that constant in every position, so no transform is needed.
    """
    values = np.asarray(values, dtype=np.float64)
    if len(cts) != values.shape[0]:
        raise CapacityError(f"{len(cts)} ciphertexts but {values.shape[0]} values")
    out = []
    for ct, v in zip(cts, values):
        params = ct.params
        c = int(np.rint(v * ct.scale))
        consts = np.array([c % params.primes[j] for j in range(ct.level + 1)], dtype=np.uint64)
        pt = Plaintext(params, np.repeat(consts[:, None], params.ring_dim, axis=1), ct.scale, ct.level)
        out.append(add_plain(ct, pt))
    return out
