"""CKKS parameter sets and named presets."""

from __future__ import annotations

import functools
from dataclasses import dataclass

from heact.ckks.ring import RingContext, ntt_primes, ring_context
from heact.errors import ParameterError

SUPPORTED_RING_DIMS = (1024, 2048, 4096, 8192, 16384)


@dataclass(frozen=True)
class CkksParams:
    """Ring dimension, modulus chain bit sizes and scale.

    The last entry of ``coeff_mod_bits`` is the special prime used only for
    key switching; the others form the data chain, so a chain of ``k`` bit
    sizes supports ``k - 2`` rescales.
    """

    ring_dim: int
    coeff_mod_bits: tuple[int, ...]
    scale_log2: int
    security_claim: str = "unverified"
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "coeff_mod_bits", tuple(int(b) for b in self.coeff_mod_bits))
        if self.ring_dim not in SUPPORTED_RING_DIMS:
            raise ParameterError(
                f"ring dimension {self.ring_dim} unsupported; use one of {SUPPORTED_RING_DIMS}"
            )
        if len(self.coeff_mod_bits) < 2:
            raise ParameterError("coeff_mod_bits needs a data prime and a special prime")
        for b in self.coeff_mod_bits:
            if not 30 <= b <= 60:
                raise ParameterError(f"prime bit length {b} outside [30, 60]")
        interior = self.coeff_mod_bits[1:-1]
        if interior and self.scale_log2 > min(interior) + 1:
            raise ParameterError(
                f"scale 2^{self.scale_log2} too large to rescale by a {min(interior)}-bit prime"
            )
        if self.scale_log2 >= self.coeff_mod_bits[0]:
            raise ParameterError("scale leaves no headroom in the base prime")

    @property
    def slots(self) -> int:
        return self.ring_dim // 2

    @property
    def scale(self) -> float:
        return float(2**self.scale_log2)

    @property
    def top_level(self) -> int:
        return len(self.coeff_mod_bits) - 2

    @property
    def primes(self) -> tuple[int, ...]:
        return _primes(self.coeff_mod_bits, self.ring_dim)

    @property
    def special_index(self) -> int:
        return len(self.coeff_mod_bits) - 1

    @property
    def ring(self) -> RingContext:
        return ring_context(self.ring_dim, self.primes)

    def describe(self) -> dict:
        return {
            "name": self.name,
            "ring_dim": self.ring_dim,
            "slots": self.slots,
            "coeff_mod_bits": list(self.coeff_mod_bits),
            "primes": [str(p) for p in self.primes],
            "scale_log2": self.scale_log2,
            "max_rescales": self.top_level,
            "security_claim": self.security_claim,
        }


@functools.lru_cache(maxsize=None)
def _primes(bits: tuple[int, ...], n: int) -> tuple[int, ...]:
    # data primes first, then the special prime; distinct even when sizes repeat
    return ntt_primes(bits, n)


PRESETS: dict[str, CkksParams] = {
    "cifar10-paper": CkksParams(8192, (60, 40, 40, 60), 40, "128-bit (inherited, not validated)", "cifar10-paper"),
    "cifar100-paper": CkksParams(16384, (60, 40, 60), 40, "128-bit (inherited, not validated)", "cifar100-paper"),
    "ci-small": CkksParams(1024, (40, 30, 40), 30, "none (test preset)", "ci-small"),
}


def preset(name: str) -> CkksParams:
    try:
        return PRESETS[name]
    except KeyError:
        raise ParameterError(
            f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}"
        ) from None
