"""Plaintext reference backend.

Ciphertexts are plain numpy rows tagged with a key identifier. Arithmetic is
bit-exact with the BFV backend, which makes this backend the oracle for
backend-equivalence tests and the fast path for large test corpora. It offers
no confidentiality whatsoever.
"""

from __future__ import annotations

import hashlib
import math
import os
import struct

import numpy as np

from ..errors import DecodeError, ParamsMismatchError
from .base import Backend, KeyMaterial, plan_rotation

_KEY_ID_LEN = 16


def _key_id(secret: bytes) -> bytes:
    return hashlib.sha256(secret).digest()[:_KEY_ID_LEN]


class ReferenceBackend(Backend):
    name = "reference"

    def _keygen(self, rotation_steps):
        secret = os.urandom(32)
        kid = _key_id(secret)
        n = self.params.slot_count
        steps = frozenset(s % n for s in rotation_steps if s % n)
        return KeyMaterial(self.params, self.name, public_key=kid, relin_keys=kid,
                           galois_keys=(kid, steps), secret_key=secret)

    def _on_attach(self, keys):
        self._kid = keys.public_key
        self._steps = set(keys.galois_keys[1]) if keys.galois_keys else set()

    def _dump_key_payload(self, kind, key):
        if kind == "galois":
            kid, steps = key
            return kid + struct.pack(f"<I{len(steps)}I", len(steps), *sorted(steps))
        return bytes(key)

    def _load_key_payload(self, kind, payload):
        if kind == "galois":
            kid = payload[:_KEY_ID_LEN]
            (count,) = struct.unpack_from("<I", payload, _KEY_ID_LEN)
            steps = struct.unpack_from(f"<{count}I", payload, _KEY_ID_LEN + 4)
            return kid, frozenset(steps)
        expected = 32 if kind == "secret" else _KEY_ID_LEN
        if len(payload) != expected:
            raise DecodeError(f"{kind} key must be {expected} bytes")
        return bytes(payload)

    def _freeze(self, arr: np.ndarray):
        arr = np.mod(arr, self.params.plain_modulus)
        arr.flags.writeable = False
        return self._kid, arr

    def _same_key(self, *payloads):
        for kid, _ in payloads:
            if kid != self._kid:
                raise ParamsMismatchError("ciphertext encrypted under a different key")

    def _encrypt(self, slots):
        return self._freeze(slots.copy())

    def _decrypt(self, payload, secret_key):
        kid, arr = payload
        if _key_id(secret_key) != kid:
            raise ParamsMismatchError("secret key does not match ciphertext")
        return arr.copy()

    def _add(self, a, b):
        self._same_key(a, b)
        return self._freeze(a[1] + b[1])

    def _sub(self, a, b):
        self._same_key(a, b)
        return self._freeze(a[1] - b[1])

    def _add_plain(self, a, p):
        return self._freeze(a[1] + p)

    def _sub_plain(self, a, p):
        return self._freeze(a[1] - p)

    def _mul(self, a, b):
        self._same_key(a, b)
        return self._freeze(a[1] * b[1])

    def _mul_plain(self, a, p):
        return self._freeze(a[1] * p)

    def _rotate_left(self, a, k):
        arr = a[1]
        for step in plan_rotation(k, self._steps, self.params.slot_count):
            arr = np.roll(arr, -step)
        return self._freeze(arr)

    def _noise_budget(self, payload, secret_key):
        return math.inf

    def _dump_ciphertext(self, payload):
        kid, arr = payload
        return kid + arr.astype("<u4").tobytes()

    def _load_ciphertext(self, payload):
        n = self.params.slot_count
        if len(payload) != _KEY_ID_LEN + 4 * n:
            raise DecodeError("reference ciphertext has wrong length")
        kid = bytes(payload[:_KEY_ID_LEN])
        if getattr(self, "_kid", None) is not None and kid != self._kid:
            raise DecodeError("ciphertext was produced under a different key")
        arr = np.frombuffer(payload, dtype="<u4", offset=_KEY_ID_LEN).astype(np.int64)
        if np.any(arr >= self.params.plain_modulus):
            raise DecodeError("slot value out of range")
        arr.flags.writeable = False
        return kid, arr
