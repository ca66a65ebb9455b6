"""Binary serialization of CKKS parameters, keys and ciphertexts.

Layout, all integers little-endian::

    header  magic b"HECK" | u16 version | u16 kind
            | u32 ring_dim | u16 scale_log2 | u16 n_bits | n_bits x u16
    array   u32 ndim | ndim x u64 shape | u64 count | count x u64

The body after the header depends on ``kind``:

* ciphertext: f64 scale, u32 level, one array ``(parts, level + 1, N)``
* secret key: array of coefficients (two's complement), array of NTT rows
* public key: arrays ``b`` and ``a``
* evaluation keys: public key body, relinearization array, u32 count,
  then per rotation step an i64 step and its array

The format carries a version number but no stability promise across
versions; readers reject anything they do not recognise.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from heact.ckks.params import CkksParams
from heact.ckks.scheme import (
    Ciphertext,
    EvaluationKeys,
    KeySwitchKey,
    PublicKey,
    SecretKey,
)
from heact.errors import ParseError

MAGIC = b"HECK"
VERSION = 1

KIND_CIPHERTEXT = 1
KIND_SECRET_KEY = 2
KIND_PUBLIC_KEY = 3
KIND_EVALUATION_KEYS = 4

_KINDS = {
    Ciphertext: KIND_CIPHERTEXT,
    SecretKey: KIND_SECRET_KEY,
    PublicKey: KIND_PUBLIC_KEY,
    EvaluationKeys: KIND_EVALUATION_KEYS,
}


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise ParseError("truncated input", f"offset {self.pos}")
        out = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return out if len(out) > 1 else out[0]

    def array(self) -> np.ndarray:
        ndim = self.take("<I")
        if ndim > 8:
            raise ParseError(f"implausible array rank {ndim}", f"offset {self.pos}")
        shape = self.take(f"<{ndim}Q") if ndim else ()
        shape = shape if isinstance(shape, tuple) else (shape,)
        count = self.take("<Q")
        if count != int(np.prod(shape, dtype=np.int64)):
            raise ParseError(f"array count {count} does not match shape {shape}", f"offset {self.pos}")
        end = self.pos + 8 * count
        if end > len(self.buf):
            raise ParseError("truncated array payload", f"offset {self.pos}")
        out = np.frombuffer(self.buf[self.pos : end], dtype="<u8").astype(np.uint64).reshape(shape)
        self.pos = end
        return out


def _write_array(out: BinaryIO, a: np.ndarray) -> None:
    a = np.ascontiguousarray(a)
    out.write(struct.pack("<I", a.ndim))
    out.write(struct.pack(f"<{a.ndim}Q", *a.shape))
    out.write(struct.pack("<Q", a.size))
    out.write(a.astype("<u8", copy=False).tobytes())


def _write_header(out: BinaryIO, kind: int, params: CkksParams) -> None:
    bits = params.coeff_mod_bits
    out.write(MAGIC)
    out.write(struct.pack("<HHIHH", VERSION, kind, params.ring_dim, params.scale_log2, len(bits)))
    out.write(struct.pack(f"<{len(bits)}H", *bits))


def _read_header(r: _Reader) -> tuple[int, CkksParams]:
    if bytes(r.buf[:4]) != MAGIC:
        raise ParseError("not a serialized CKKS object (bad magic)", "header")
    r.pos = 4
    version, kind, ring_dim, scale_log2, nbits = r.take("<HHIHH")
    if version != VERSION:
        raise ParseError(f"unsupported format version {version}", "header.version")
    bits = r.take(f"<{nbits}H") if nbits else ()
    bits = (bits,) if isinstance(bits, int) else bits
    return kind, CkksParams(ring_dim, tuple(bits), scale_log2)


def _check_shape(a: np.ndarray, shape: tuple[int, ...], where: str) -> np.ndarray:
    if a.shape != shape:
        raise ParseError(f"shape {a.shape}, expected {shape}", where)
    return a


def _write_ksk(out: BinaryIO, key: KeySwitchKey) -> None:
    _write_array(out, key.data)


def _ksk_shape(params: CkksParams) -> tuple[int, ...]:
    return (params.top_level + 1, 2, len(params.primes), params.ring_dim)


def dumps(obj) -> bytes:
    """Serialize a ciphertext or key object to bytes."""
    kind = _KINDS.get(type(obj))
    if kind is None:
        raise TypeError(f"cannot serialize {type(obj).__name__}")
    out = io.BytesIO()
    _write_header(out, kind, obj.params)
    if kind == KIND_CIPHERTEXT:
        out.write(struct.pack("<dI", obj.scale, obj.level))
        _write_array(out, obj.parts)
    elif kind == KIND_SECRET_KEY:
        _write_array(out, obj.coeffs.astype(np.int64).view(np.uint64))
        _write_array(out, obj.ntt)
    elif kind == KIND_PUBLIC_KEY:
        _write_array(out, obj.b)
        _write_array(out, obj.a)
    else:
        _write_array(out, obj.public.b)
        _write_array(out, obj.public.a)
        _write_ksk(out, obj.relin)
        out.write(struct.pack("<I", len(obj.galois)))
        for step in sorted(obj.galois):
            out.write(struct.pack("<q", step))
            _write_ksk(out, obj.galois[step])
    return out.getvalue()


def loads(buf: bytes, params: CkksParams | None = None):
    """Inverse of :func:`dumps`.

    ``params`` lets the caller keep preset names and security labels; its
    ring dimension, chain and scale must match the header.
    """
    r = _Reader(buf)
    kind, found = _read_header(r)
    if params is not None:
        same = (params.ring_dim, params.coeff_mod_bits, params.scale_log2) == (
            found.ring_dim, found.coeff_mod_bits, found.scale_log2,
        )
        if not same:
            raise ParseError("serialized parameters differ from the expected set", "header")
    else:
        params = found
    n = params.ring_dim
    data_rows = params.top_level + 1
    if kind == KIND_CIPHERTEXT:
        scale, level = r.take("<dI")
        parts = r.array()
        if level > params.top_level or parts.ndim != 3 or parts.shape[0] not in (2, 3):
            raise ParseError(f"bad ciphertext layout {parts.shape} at level {level}", "ciphertext")
        _check_shape(parts, (parts.shape[0], level + 1, n), "ciphertext.parts")
        obj = Ciphertext(params, parts, scale, level)
    elif kind == KIND_SECRET_KEY:
        coeffs = _check_shape(r.array(), (n,), "secret.coeffs").view(np.int64)
        if np.any(np.abs(coeffs) > 1):
            raise ParseError("secret coefficients outside {-1, 0, 1}", "secret.coeffs")
        ntt = _check_shape(r.array(), (len(params.primes), n), "secret.ntt")
        obj = SecretKey(params, coeffs.astype(np.int8), ntt)
    elif kind == KIND_PUBLIC_KEY:
        b = _check_shape(r.array(), (data_rows, n), "public.b")
        a = _check_shape(r.array(), (data_rows, n), "public.a")
        obj = PublicKey(params, b, a)
    elif kind == KIND_EVALUATION_KEYS:
        b = _check_shape(r.array(), (data_rows, n), "public.b")
        a = _check_shape(r.array(), (data_rows, n), "public.a")
        relin = KeySwitchKey(params, _check_shape(r.array(), _ksk_shape(params), "relin"))
        galois = {}
        for _ in range(r.take("<I")):
            step = r.take("<q")
            galois[step] = KeySwitchKey(params, _check_shape(r.array(), _ksk_shape(params), f"galois[{step}]"))
        obj = EvaluationKeys(params, PublicKey(params, b, a), relin, galois)
    else:
        raise ParseError(f"unknown object kind {kind}", "header.kind")
    if r.pos != len(r.buf):
        raise ParseError(f"{len(r.buf) - r.pos} trailing bytes", "body")
    _check_residues(obj)
    return obj


def _check_residues(obj) -> None:
    # every residue must be reduced modulo its row's prime
    params = obj.params
    moduli = params.ring.moduli
    arrays = {
        Ciphertext: lambda o: [o.parts],
        SecretKey: lambda o: [o.ntt],
        PublicKey: lambda o: [o.b, o.a],
        EvaluationKeys: lambda o: [o.public.b, o.public.a, o.relin.data, *(k.data for k in o.galois.values())],
    }[type(obj)](obj)
    for a in arrays:
        rows = a.shape[-2]
        if np.any(a >= moduli[:rows, None]):
            raise ParseError("residue not reduced modulo its prime", type(obj).__name__)


def save(obj, path: str | Path) -> None:
    Path(path).write_bytes(dumps(obj))


def load(path: str | Path, params: CkksParams | None = None):
    return loads(Path(path).read_bytes(), params)
