"""Encryption parameter selection for the batched BFV setting."""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from enum import IntEnum

POLY_MODULUS_DEGREE = 8192
SLOT_COUNT = POLY_MODULUS_DEGREE // 2
PLAIN_MODULUS_BITS = 22


class SecurityLevel(IntEnum):
    BITS_128 = 128
    BITS_192 = 192
    BITS_256 = 256


# Miller-Rabin with these bases is exact for n < 3.3 * 10**24.
_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41)


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    for p in _MR_BASES:
        if n % p == 0:
            return n == p
    d, r = n - 1, 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for a in _MR_BASES:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def batching_prime(degree: int = POLY_MODULUS_DEGREE, bits: int = PLAIN_MODULUS_BITS) -> int:
    """Largest ``bits``-bit prime congruent to 1 modulo ``2 * degree``."""
    step = 2 * degree
    k = ((1 << bits) - 2) // step
    while k * step + 1 > 1 << (bits - 1):
        p = k * step + 1
        if is_prime(p):
            return p
        k -= 1
    raise ValueError(f"no {bits}-bit batching prime for degree {degree}")


@dataclass(frozen=True)
class HeParams:
    poly_modulus_degree: int
    plain_modulus: int
    security_level: SecurityLevel

    def __post_init__(self) -> None:
        t = self.plain_modulus
        if not is_prime(t):
            raise ValueError(f"plain modulus {t} is not prime")
        if t % (2 * self.poly_modulus_degree) != 1:
            raise ValueError(f"plain modulus {t} does not support batching")
        object.__setattr__(self, "security_level", SecurityLevel(self.security_level))

    @property
    def slot_count(self) -> int:
        """Length of one batching row; the second row is never used."""
        return self.poly_modulus_degree // 2

    @property
    def params_id(self) -> int:
        key = f"bfv|{self.poly_modulus_degree}|{self.plain_modulus}|{int(self.security_level)}"
        return zlib.crc32(key.encode())

    def with_security(self, security: int) -> "HeParams":
        return HeParams(self.poly_modulus_degree, self.plain_modulus, SecurityLevel(security))


def select_params(security: int = 192) -> HeParams:
    """Parameters for the given security level.

    Degree and plaintext modulus are fixed; the security level only changes
    the coefficient-modulus budget the backend picks.
    """
    level = SecurityLevel(security)
    return HeParams(POLY_MODULUS_DEGREE, batching_prime(), level)
