"""Boolean gates on ciphertexts whose slots are all 0 or 1.

Binarity is a caller contract and is not checked: on other inputs the
arithmetic is still well defined modulo T but the results are not Boolean.
"""

from __future__ import annotations

import numpy as np

from .backend import Backend, HomomorphicVector


def gate_not(be: Backend, v: HomomorphicVector) -> HomomorphicVector:
    # 1 + (T-1) * v, with both constants as plaintexts.
    n = be.params.slot_count
    minus_one = np.full(n, be.params.plain_modulus - 1, dtype=np.int64)
    ones = np.ones(n, dtype=np.int64)
    return be.add_plain(be.mul_plain(v, minus_one), ones)


def gate_and(be: Backend, a: HomomorphicVector, b: HomomorphicVector) -> HomomorphicVector:
    return be.mul(a, b)


def gate_or(be: Backend, a: HomomorphicVector, b: HomomorphicVector) -> HomomorphicVector:
    return gate_not(be, gate_and(be, gate_not(be, a), gate_not(be, b)))


def gate_xor(be: Backend, a: HomomorphicVector, b: HomomorphicVector) -> HomomorphicVector:
    return gate_and(be, gate_or(be, a, b), gate_not(be, gate_and(be, a, b)))
