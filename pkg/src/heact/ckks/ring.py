"""RNS arithmetic in Z_q[X]/(X^N + 1).

Residues live in ``uint64`` arrays of shape ``(rows, N)``; every row carries
its own prime, named by an index into the context's prime table. All primes
are below 2^62 so Montgomery products never overflow the 64-bit lanes.

The hot loops are numba kernels. numpy has no 64x64->128 multiply, so the
high word is assembled from 32-bit halves.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numba
import numpy as np

from heact.errors import ParameterError

_M32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_ONE = np.uint64(1)
_ZERO = np.uint64(0)

MAX_PRIME_BITS = 62


@numba.njit(inline="always")
def _mulhi(a, b):
    a0 = a & _M32
    a1 = a >> _S32
    b0 = b & _M32
    b1 = b >> _S32
    p00 = a0 * b0
    p01 = a0 * b1
    p10 = a1 * b0
    p11 = a1 * b1
    mid = (p00 >> _S32) + (p01 & _M32) + (p10 & _M32)
    return p11 + (p01 >> _S32) + (p10 >> _S32) + (mid >> _S32)


@numba.njit(inline="always")
def _mont(a, b, p, pinv):
    # a*b*2^-64 mod p for a, b < p < 2^63; pinv = -p^-1 mod 2^64
    lo = a * b
    hi = _mulhi(a, b)
    m = lo * pinv
    t = hi + _mulhi(m, p)
    if lo != _ZERO:
        t += _ONE
    if t >= p:
        t -= p
    return t


_TOP = np.uint64(1 << 63)


@numba.njit(inline="always")
def _shoup(x, w, wq, p):
    # x*w mod p up to one extra p, with wq = floor(w * 2^64 / p)
    return x * w - _mulhi(x, wq) * p


@numba.njit(inline="always")
def _reduce(x, p, finv):
    # x mod p for any 64-bit x; the float quotient is off by at most one
    q = np.uint64(np.float64(x) * finv)
    r = x - q * p
    if r >= _TOP:
        r += p
    if r >= p:
        r -= p
    return r


@numba.njit(inline="always")
def _lift1(x, q, half, p, finv):
    # residue mod q, read as a centered integer, reduced mod p
    if x > half:
        y = _reduce(q - x, p, finv)
        return p - y if y != _ZERO else _ZERO
    return _reduce(x, p, finv)


# Stages with half-width >= _VEC_MIN run over two disjoint slices, a form
# LLVM vectorizes; narrower stages use plain index loops.
_VEC_MIN = 2


@numba.njit(inline="always")
def _fwd_span(lo, hi, s, sq, p, p2):
    for j in range(lo.shape[0]):
        u = lo[j]
        u = u - p2 if u >= p2 else u
        v = _shoup(hi[j], s, sq, p)
        lo[j] = u + v
        hi[j] = u - v + p2


@numba.njit(inline="always")
def _inv_span(lo, hi, s, sq, p, p2):
    for j in range(lo.shape[0]):
        u = lo[j]
        v = hi[j]
        x = u + v
        lo[j] = x - p2 if x >= p2 else x
        hi[j] = _shoup(u - v + p2, s, sq, p)


@numba.njit(cache=True, nogil=True)
def _ntt_row(row, w, wq, p):
    # Cooley-Tukey with lazy butterflies: values stay below 4p until the end
    n = row.shape[0]
    p2 = p + p
    t = n
    m = 1
    while m < n:
        t >>= 1
        if t >= _VEC_MIN:
            for i in range(m):
                j1 = 2 * i * t
                _fwd_span(row[j1 : j1 + t], row[j1 + t : j1 + 2 * t], w[m + i], wq[m + i], p, p2)
        else:
            for i in range(m):
                j = 2 * i
                u = row[j]
                u = u - p2 if u >= p2 else u
                v = _shoup(row[j + 1], w[m + i], wq[m + i], p)
                row[j] = u + v
                row[j + 1] = u - v + p2
        m <<= 1
    for j in range(n):
        x = row[j]
        x = x - p2 if x >= p2 else x
        row[j] = x - p if x >= p else x


@numba.njit(cache=True, nogil=True)
def _intt_row(row, iw, iwq, ninv, ninvq, p):
    # Gentleman-Sande with values below 2p, then scale by n^-1
    n = row.shape[0]
    p2 = p + p
    t = 1
    m = n
    while m > 1:
        h = m >> 1
        if t >= _VEC_MIN:
            for i in range(h):
                j1 = 2 * i * t
                _inv_span(row[j1 : j1 + t], row[j1 + t : j1 + 2 * t], iw[h + i], iwq[h + i], p, p2)
        else:
            for i in range(h):
                j = 2 * i
                u = row[j]
                v = row[j + 1]
                x = u + v
                row[j] = x - p2 if x >= p2 else x
                row[j + 1] = _shoup(u - v + p2, iw[h + i], iwq[h + i], p)
        t <<= 1
        m = h
    for j in range(n):
        x = _shoup(row[j], ninv, ninvq, p)
        row[j] = x - p if x >= p else x


@numba.njit(cache=True, nogil=True)
def _ntt_rows(a, pidx, tabs):
    primes, w, wq = tabs[0], tabs[4], tabs[5]
    for r in range(a.shape[0]):
        k = pidx[r]
        _ntt_row(a[r], w[k], wq[k], primes[k])


@numba.njit(cache=True, nogil=True)
def _intt_rows(a, pidx, tabs):
    primes, iw, iwq, ninv, ninvq = tabs[0], tabs[6], tabs[7], tabs[8], tabs[9]
    for r in range(a.shape[0]):
        k = pidx[r]
        _intt_row(a[r], iw[k], iwq[k], ninv[k], ninvq[k], primes[k])


@numba.njit(cache=True, nogil=True)
def _mulmod_rows(a, b, pidx, primes, pinvs, r2s):
    rows, n = a.shape
    out = np.empty_like(a)
    for r in range(rows):
        k = pidx[r]
        p = primes[k]
        pinv = pinvs[k]
        r2 = r2s[k]
        for j in range(n):
            out[r, j] = _mont(_mont(a[r, j], b[r, j], p, pinv), r2, p, pinv)
    return out


@numba.njit(cache=True, nogil=True)
def _mulconst_rows(a, consts, pidx, primes, pinvs, r2s):
    # consts[r] is a plain residue for row r
    rows, n = a.shape
    out = np.empty_like(a)
    for r in range(rows):
        k = pidx[r]
        p = primes[k]
        pinv = pinvs[k]
        c = _mont(consts[r], r2s[k], p, pinv)
        for j in range(n):
            out[r, j] = _mont(a[r, j], c, p, pinv)
    return out


@numba.njit(cache=True, nogil=True)
def _lift_rows(src, q_src, dst_pidx, primes, finv, centered):
    """Reinterpret residues mod ``q_src`` as integers and reduce them per row.

    ``src`` is ``(rows, N)``; output is ``(rows, len(dst_pidx), N)``. With
    ``centered`` the integer representative lies in (-q/2, q/2].
    """
    rows, n = src.shape
    k = dst_pidx.shape[0]
    out = np.empty((rows, k, n), dtype=np.uint64)
    half = q_src >> _ONE if centered else q_src
    for r in range(rows):
        for i in range(k):
            d = dst_pidx[i]
            p = primes[d]
            f = finv[d]
            for j in range(n):
                out[r, i, j] = _lift1(src[r, j], q_src, half, p, f)
    return out


@numba.njit(cache=True, nogil=True)
def _drop_prime(rows, top, ktop, m, out, scratch, tabs):
    """Exact rounded division by the prime ``ktop``.

    ``rows[:m]`` hold NTT residues for primes ``0..m-1`` and ``top`` the NTT
    residue for ``ktop`` (overwritten). Writes ``(rows - [top]) / q_ktop``.
    """
    primes, pinvs, finv, w, wq, dinv = tabs[0], tabs[1], tabs[3], tabs[4], tabs[5], tabs[10]
    n = top.shape[0]
    _intt_row(top, tabs[6][ktop], tabs[7][ktop], tabs[8][ktop], tabs[9][ktop], primes[ktop])
    q = primes[ktop]
    half = q >> _ONE
    for i in range(m):
        p = primes[i]
        f = finv[i]
        for j in range(n):
            scratch[j] = _lift1(top[j], q, half, p, f)
        _ntt_row(scratch, w[i], wq[i], p)
        c = dinv[ktop, i]
        pinv = pinvs[i]
        for j in range(n):
            x = rows[i, j]
            y = scratch[j]
            d = x - y if x >= y else x + p - y
            out[i, j] = _mont(d, c, p, pinv)


@numba.njit(cache=True, nogil=True)
def _key_switch_one(d, key, sp, tabs, coeff, digit, acc, o0, o1):
    """Key-switch one NTT polynomial ``d`` (L, N) with a Montgomery-form key.

    ``key`` is ``(digits, 2, primes, N)``; results go to ``o0`` and ``o1``.
    """
    primes, pinvs, finv, w, wq = tabs[0], tabs[1], tabs[3], tabs[4], tabs[5]
    nl, n = d.shape
    for i in range(nl):
        for j in range(n):
            coeff[i, j] = d[i, j]
        _intt_row(coeff[i], tabs[6][i], tabs[7][i], tabs[8][i], tabs[9][i], primes[i])
    for e in range(nl + 1):
        for j in range(n):
            acc[0, e, j] = _ZERO
            acc[1, e, j] = _ZERO
    for i in range(nl):
        qi = primes[i]
        half = qi >> _ONE
        for e in range(nl + 1):
            k = e if e < nl else sp
            p = primes[k]
            pinv = pinvs[k]
            if k == i:
                for j in range(n):
                    digit[j] = d[i, j]
            else:
                f = finv[k]
                for j in range(n):
                    digit[j] = _lift1(coeff[i, j], qi, half, p, f)
                _ntt_row(digit, w[k], wq[k], p)
            kb = key[i, 0, k]
            ka = key[i, 1, k]
            for j in range(n):
                x = digit[j]
                y = acc[0, e, j] + _mont(x, kb[j], p, pinv)
                if y >= p:
                    y -= p
                acc[0, e, j] = y
                y = acc[1, e, j] + _mont(x, ka[j], p, pinv)
                if y >= p:
                    y -= p
                acc[1, e, j] = y
    _drop_prime(acc[0], acc[0, nl], sp, nl, o0, digit, tabs)
    _drop_prime(acc[1], acc[1, nl], sp, nl, o1, digit, tabs)


@numba.njit(cache=True, nogil=True)
def _key_switch_batch(d, key, sp, tabs):
    # d: (B, L, N) -> (2, B, L, N)
    nb, nl, n = d.shape
    out = np.empty((2, nb, nl, n), dtype=np.uint64)
    coeff = np.empty((nl, n), dtype=np.uint64)
    digit = np.empty(n, dtype=np.uint64)
    acc = np.empty((2, nl + 1, n), dtype=np.uint64)
    for b in range(nb):
        _key_switch_one(d[b], key, sp, tabs, coeff, digit, acc, out[0, b], out[1, b])
    return out


@numba.njit(cache=True, nogil=True)
def _rotate_batch(parts, perm, key, sp, accumulate, tabs):
    """Apply an automorphism and key-switch each ciphertext of ``(B, 2, L, N)``.

    With ``accumulate`` the input is added to its rotation.
    """
    primes = tabs[0]
    nb, _, nl, n = parts.shape
    out = np.empty_like(parts)
    coeff = np.empty((nl, n), dtype=np.uint64)
    digit = np.empty(n, dtype=np.uint64)
    acc = np.empty((2, nl + 1, n), dtype=np.uint64)
    d = np.empty((nl, n), dtype=np.uint64)
    o0 = np.empty((nl, n), dtype=np.uint64)
    o1 = np.empty((nl, n), dtype=np.uint64)
    for b in range(nb):
        for i in range(nl):
            for j in range(n):
                d[i, j] = parts[b, 1, i, perm[j]]
        _key_switch_one(d, key, sp, tabs, coeff, digit, acc, o0, o1)
        for i in range(nl):
            p = primes[i]
            for j in range(n):
                x = parts[b, 0, i, perm[j]] + o0[i, j]
                if x >= p:
                    x -= p
                y = o1[i, j]
                if accumulate:
                    x += parts[b, 0, i, j]
                    if x >= p:
                        x -= p
                    y += parts[b, 1, i, j]
                    if y >= p:
                        y -= p
                out[b, 0, i, j] = x
                out[b, 1, i, j] = y
    return out


@numba.njit(cache=True, nogil=True)
def _rescale_batch(a, tabs):
    # a: (B, L, N) NTT form -> (B, L - 1, N), divided by the top prime
    nb, nl, n = a.shape
    out = np.empty((nb, nl - 1, n), dtype=np.uint64)
    top = np.empty(n, dtype=np.uint64)
    scratch = np.empty(n, dtype=np.uint64)
    for b in range(nb):
        for j in range(n):
            top[j] = a[b, nl - 1, j]
        _drop_prime(a[b], top, nl - 1, nl - 1, out[b], scratch, tabs)
    return out


@numba.njit(cache=True, nogil=True)
def _mul_rescale_batch(w, c, tabs):
    """Products ``w[r] * c[p]`` for plaintexts ``w`` (R, L, N) and parts ``c``
    (K, L, N), each divided by the top prime: ``(R, K, L - 1, N)``."""
    primes, pinvs, r2s = tabs[0], tabs[1], tabs[2]
    nr, nl, n = w.shape
    nk = c.shape[0]
    out = np.empty((nr, nk, nl - 1, n), dtype=np.uint64)
    cm = np.empty((nk, nl, n), dtype=np.uint64)
    for k in range(nk):
        for i in range(nl):
            p = primes[i]
            pinv = pinvs[i]
            r2 = r2s[i]
            for j in range(n):
                cm[k, i, j] = _mont(c[k, i, j], r2, p, pinv)
    prod = np.empty((nl, n), dtype=np.uint64)
    top = np.empty(n, dtype=np.uint64)
    scratch = np.empty(n, dtype=np.uint64)
    for r in range(nr):
        for k in range(nk):
            for i in range(nl):
                p = primes[i]
                pinv = pinvs[i]
                for j in range(n):
                    prod[i, j] = _mont(w[r, i, j], cm[k, i, j], p, pinv)
            for j in range(n):
                top[j] = prod[nl - 1, j]
            _drop_prime(prod, top, nl - 1, nl - 1, out[r, k], scratch, tabs)
    return out


@numba.njit(cache=True, nogil=True)
def _to_mont(a, pidx, primes, pinvs, r2s):
    rows, n = a.shape
    out = np.empty_like(a)
    for r in range(rows):
        k = pidx[r]
        p = primes[k]
        for j in range(n):
            out[r, j] = _mont(a[r, j], r2s[k], p, pinvs[k])
    return out


def add_rows(a: np.ndarray, b: np.ndarray, moduli: np.ndarray) -> np.ndarray:
    s = a + b
    s -= moduli * (s >= moduli)
    return s


def sub_rows(a: np.ndarray, b: np.ndarray, moduli: np.ndarray) -> np.ndarray:
    return np.where(a >= b, a - b, a + (moduli - b))


def neg_rows(a: np.ndarray, moduli: np.ndarray) -> np.ndarray:
    return np.where(a == 0, a, moduli - a)


def bit_reverse(k: int, bits: int) -> int:
    return int(format(k, f"0{bits}b")[::-1], 2) if bits else 0


def ntt_primes(bits: list[int] | tuple[int, ...], n: int) -> tuple[int, ...]:
    """Distinct primes p = 1 (mod 2n), each the largest below 2^b not yet taken."""
    from sympy import isprime

    step = 2 * n
    taken: set[int] = set()
    out = []
    for b in bits:
        if not 2 <= b <= MAX_PRIME_BITS:
            raise ParameterError(f"prime bit length {b} outside [2, {MAX_PRIME_BITS}]")
        cand = (1 << b) - step + 1
        while cand > (1 << (b - 1)):
            if cand not in taken and isprime(cand):
                break
            cand -= step
        else:
            raise ParameterError(f"no {b}-bit prime congruent to 1 mod {step}")
        taken.add(cand)
        out.append(cand)
    return tuple(out)


def _primitive_2nth_root(p: int, n: int) -> int:
    for x in range(2, p):
        c = pow(x, (p - 1) // (2 * n), p)
        if pow(c, n, p) == p - 1:
            return c
    raise ParameterError(f"no primitive {2 * n}-th root mod {p}")


@dataclass(frozen=True, eq=False)
class RingContext:
    """Precomputed NTT tables for a ring dimension and a prime table."""

    n: int
    primes: tuple[int, ...]
    moduli: np.ndarray  # (P,) uint64
    pinvs: np.ndarray
    r2s: np.ndarray
    roots: tuple[int, ...]
    tabs: tuple  # kernel tables, see ring_context

    @property
    def logn(self) -> int:
        return self.n.bit_length() - 1

    def rows(self, pidx) -> np.ndarray:
        return np.ascontiguousarray(pidx, dtype=np.int64)

    def column(self, pidx) -> np.ndarray:
        """Moduli broadcastable against a ``(rows, N)`` array."""
        return self.moduli[np.asarray(pidx)][:, None]

    def ntt(self, a: np.ndarray, pidx) -> np.ndarray:
        out = np.array(a, dtype=np.uint64, copy=True, order="C")
        _ntt_rows(out, self.rows(pidx), self.tabs)
        return out

    def intt(self, a: np.ndarray, pidx) -> np.ndarray:
        out = np.array(a, dtype=np.uint64, copy=True, order="C")
        _intt_rows(out, self.rows(pidx), self.tabs)
        return out

    def ntt_inplace(self, a: np.ndarray, pidx) -> None:
        _ntt_rows(a, self.rows(pidx), self.tabs)

    def intt_inplace(self, a: np.ndarray, pidx) -> None:
        _intt_rows(a, self.rows(pidx), self.tabs)

    def mul(self, a: np.ndarray, b: np.ndarray, pidx) -> np.ndarray:
        return _mulmod_rows(
            np.ascontiguousarray(a), np.ascontiguousarray(b), self.rows(pidx),
            self.moduli, self.pinvs, self.r2s,
        )

    def mul_const(self, a: np.ndarray, consts, pidx) -> np.ndarray:
        return _mulconst_rows(
            np.ascontiguousarray(a), np.asarray(consts, dtype=np.uint64), self.rows(pidx),
            self.moduli, self.pinvs, self.r2s,
        )

    def lift(self, src: np.ndarray, src_index: int, dst_pidx, centered: bool = True) -> np.ndarray:
        return _lift_rows(
            np.ascontiguousarray(src), self.moduli[src_index], self.rows(dst_pidx),
            self.moduli, self.tabs[3], centered,
        )

    def from_ints(self, coeffs, pidx) -> np.ndarray:
        """Reduce signed integer coefficients (int64 or Python ints) into rows."""
        pidx = list(pidx)
        c = np.asarray(coeffs)
        out = np.empty((len(pidx), self.n), dtype=np.uint64)
        if c.dtype == object:
            for r, k in enumerate(pidx):
                p = self.primes[k]
                out[r] = np.array([int(x) % p for x in c], dtype=np.uint64)
        else:
            c = c.astype(np.int64)
            for r, k in enumerate(pidx):
                out[r] = np.mod(c, np.int64(self.primes[k])).astype(np.uint64)
        return out

    def to_ints(self, rows: np.ndarray, pidx) -> list[int]:
        """CRT-reconstruct centered integer coefficients (exact, Python ints)."""
        pidx = list(pidx)
        q = 1
        for k in pidx:
            q *= self.primes[k]
        acc = [0] * self.n
        for r, k in enumerate(pidx):
            p = self.primes[k]
            qi = q // p
            term = qi * pow(qi, -1, p)
            for j, x in enumerate(rows[r].tolist()):
                acc[j] += x * term
        half = q // 2
        out = []
        for v in acc:
            v %= q
            out.append(v - q if v > half else v)
        return out

    @functools.lru_cache(maxsize=None)
    def galois_permutation(self, g: int) -> np.ndarray:
        """Index map applying X -> X^g to a vector in NTT (bit-reversed) order."""
        n, bits = self.n, self.logn
        brv = np.array([bit_reverse(k, bits) for k in range(n)], dtype=np.int64)
        exps = 2 * brv + 1
        target = (exps * g) % (2 * n)
        inv = np.empty(n, dtype=np.int64)
        inv[brv] = np.arange(n)
        return inv[(target - 1) // 2]


@functools.lru_cache(maxsize=None)
def ring_context(n: int, primes: tuple[int, ...]) -> RingContext:
    if n < 2 or n & (n - 1):
        raise ParameterError(f"ring dimension {n} is not a power of two")
    bits = n.bit_length() - 1
    k = len(primes)
    w = np.empty((k, n), dtype=np.uint64)
    iw = np.empty((k, n), dtype=np.uint64)
    brv = [bit_reverse(j, bits) for j in range(n)]
    roots, ninv = [], []
    for i, p in enumerate(primes):
        if p.bit_length() > MAX_PRIME_BITS or (p - 1) % (2 * n):
            raise ParameterError(f"prime {p} unusable for ring dimension {n}")
        root = _primitive_2nth_root(p, n)
        iroot = pow(root, -1, p)
        pw, ipw = [1] * n, [1] * n
        for j in range(1, n):
            pw[j] = pw[j - 1] * root % p
            ipw[j] = ipw[j - 1] * iroot % p
        w[i] = np.array([pw[brv[j]] for j in range(n)], dtype=np.uint64)
        iw[i] = np.array([ipw[brv[j]] for j in range(n)], dtype=np.uint64)
        roots.append(root)
        ninv.append(pow(n, -1, p))
    moduli = np.array(primes, dtype=np.uint64)
    pcol = np.array([[p] for p in primes], dtype=object)
    wq = ((w.astype(object) << 64) // pcol).astype(np.uint64)
    iwq = ((iw.astype(object) << 64) // pcol).astype(np.uint64)
    ninvq = [(c << 64) // p for c, p in zip(ninv, primes)]
    pinvs = np.array([(-pow(p, -1, 1 << 64)) % (1 << 64) for p in primes], dtype=np.uint64)
    r2s = np.array([(1 << 128) % p for p in primes], dtype=np.uint64)
    finv = np.array([1.0 / p for p in primes], dtype=np.float64)
    # dinv[a, b]: Montgomery form of p_a^-1 mod p_b (zero on the diagonal)
    dinv = np.zeros((k, k), dtype=np.uint64)
    for a, pa in enumerate(primes):
        for b, pb in enumerate(primes):
            if a != b:
                dinv[a, b] = pow(pa, -1, pb) * (1 << 64) % pb
    tabs = (
        moduli, pinvs, r2s, finv, w, wq, iw, iwq,
        np.array(ninv, dtype=np.uint64), np.array(ninvq, dtype=np.uint64), dinv,
    )
    return RingContext(
        n=n,
        primes=tuple(primes),
        moduli=moduli,
        pinvs=pinvs,
        r2s=r2s,
        roots=tuple(roots),
        tabs=tabs,
    )


@dataclass(frozen=True, eq=False)
class RingPoly:
    """Element of Z_Q[X]/(X^N+1) in coefficient form, one row per active prime."""

    ctx: RingContext
    residues: np.ndarray  # (level + 1, N) uint64
    level: int

    @property
    def pidx(self) -> list[int]:
        return list(range(self.level + 1))

    @classmethod
    def from_ints(cls, ctx: RingContext, coeffs, level: int) -> "RingPoly":
        return cls(ctx, ctx.from_ints(coeffs, range(level + 1)), level)

    def to_ints(self) -> list[int]:
        return self.ctx.to_ints(self.residues, self.pidx)

    def _check(self, other: "RingPoly") -> None:
        if other.ctx is not self.ctx or other.level != self.level:
            raise ParameterError("ring polynomials live in different rings or levels")

    def __add__(self, other: "RingPoly") -> "RingPoly":
        self._check(other)
        return RingPoly(self.ctx, add_rows(self.residues, other.residues, self.ctx.column(self.pidx)), self.level)

    def __sub__(self, other: "RingPoly") -> "RingPoly":
        self._check(other)
        return RingPoly(self.ctx, sub_rows(self.residues, other.residues, self.ctx.column(self.pidx)), self.level)

    def __neg__(self) -> "RingPoly":
        return RingPoly(self.ctx, neg_rows(self.residues, self.ctx.column(self.pidx)), self.level)

    def __mul__(self, other: "RingPoly") -> "RingPoly":
        self._check(other)
        pidx = self.pidx
        fa = self.ctx.ntt(self.residues, pidx)
        fb = self.ctx.ntt(other.residues, pidx)
        return RingPoly(self.ctx, self.ctx.intt(self.ctx.mul(fa, fb, pidx), pidx), self.level)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RingPoly):
            return NotImplemented
        return (
            self.ctx is other.ctx
            and self.level == other.level
            and np.array_equal(self.residues, other.residues)
        )

    __hash__ = None  # type: ignore[assignment]


@numba.njit(cache=True, nogil=True)
def _mul_bcast(a, b, pidx, primes, pinvs, r2s):
    # a: (B, R, N), b: (R, N) -> a * b per batch entry
    nb, rows, n = a.shape
    out = np.empty_like(a)
    for r in range(rows):
        k = pidx[r]
        p = primes[k]
        pinv = pinvs[k]
        r2 = r2s[k]
        for j in range(n):
            bm = _mont(b[r, j], r2, p, pinv)
            for i in range(nb):
                out[i, r, j] = _mont(a[i, r, j], bm, p, pinv)
    return out


@numba.njit(cache=True, nogil=True)
def _muladd_bcast(acc, a, b, pidx, primes, pinvs, r2s):
    # acc += a * b with a: (B, R, N), b: (R, N); acc updated in place
    nb, rows, n = a.shape
    for r in range(rows):
        k = pidx[r]
        p = primes[k]
        pinv = pinvs[k]
        r2 = r2s[k]
        for j in range(n):
            bm = _mont(b[r, j], r2, p, pinv)
            for i in range(nb):
                x = acc[i, r, j] + _mont(a[i, r, j], bm, p, pinv)
                if x >= p:
                    x -= p
                acc[i, r, j] = x


def mul_bcast(ctx: RingContext, a: np.ndarray, b: np.ndarray, pidx) -> np.ndarray:
    return _mul_bcast(
        np.ascontiguousarray(a), np.ascontiguousarray(b), ctx.rows(pidx),
        ctx.moduli, ctx.pinvs, ctx.r2s,
    )


def muladd_bcast(ctx: RingContext, acc: np.ndarray, a: np.ndarray, b: np.ndarray, pidx) -> None:
    _muladd_bcast(
        acc, np.ascontiguousarray(a), np.ascontiguousarray(b), ctx.rows(pidx),
        ctx.moduli, ctx.pinvs, ctx.r2s,
    )


def to_mont(ctx: RingContext, a: np.ndarray, pidx) -> np.ndarray:
    """Montgomery form (times 2^64 mod p) of ``(rows, N)`` residues."""
    return _to_mont(np.ascontiguousarray(a), ctx.rows(pidx), ctx.moduli, ctx.pinvs, ctx.r2s)


def key_switch_batch(ctx: RingContext, d: np.ndarray, key_mont: np.ndarray, special: int) -> np.ndarray:
    """Key-switch NTT polynomials ``(B, L, N)``; returns ``(2, B, L, N)``."""
    return _key_switch_batch(np.ascontiguousarray(d), key_mont, special, ctx.tabs)


def rotate_batch(
    ctx: RingContext, parts: np.ndarray, perm: np.ndarray, key_mont: np.ndarray,
    special: int, accumulate: bool = False,
) -> np.ndarray:
    """Automorphism plus key switch on ciphertexts ``(B, 2, L, N)``."""
    return _rotate_batch(np.ascontiguousarray(parts), perm, key_mont, special, accumulate, ctx.tabs)


def rescale_batch(ctx: RingContext, a: np.ndarray) -> np.ndarray:
    """Divide NTT polynomials ``(B, L, N)`` by prime ``L - 1`` with rounding."""
    return _rescale_batch(np.ascontiguousarray(a), ctx.tabs)


def mul_rescale_batch(ctx: RingContext, w: np.ndarray, parts: np.ndarray) -> np.ndarray:
    """Plaintext rows ``(R, L, N)`` times ciphertext parts ``(K, L, N)``, rescaled."""
    return _mul_rescale_batch(np.ascontiguousarray(w), np.ascontiguousarray(parts), ctx.tabs)
