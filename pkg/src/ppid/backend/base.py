"""Backend-independent homomorphic vector interface.

Every backend works on one batching row of ``params.slot_count`` slots.
Multiplicative depth is tracked here rather than in the backends so that the
reference and SEAL implementations account for it identically.
"""

from __future__ import annotations

import logging
import struct
import zlib
from abc import ABC, abstractmethod
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Any, ClassVar, Iterable

import numpy as np

from ..errors import DecodeError, MissingKeyError, ParamsMismatchError
from ..params import HeParams

audit_log = logging.getLogger("ppid.audit")

CIPHERTEXT_MAGIC = b"HEV1"
KEY_MAGICS = {
    "public": b"HPK1",
    "secret": b"HSK1",
    "relin": b"HRK1",
    "galois": b"HGK1",
}
_HEADER = struct.Struct("<4sII")

# Layout rotations (field starts and the agnostic shift) on top of powers of two.
LAYOUT_ROTATION_STEPS = (400, 408, 456, 560, 800, 1200, -400)


def default_rotation_steps(slot_count: int) -> list[int]:
    steps = []
    k = 1
    while k < slot_count:
        steps += [k, -k]
        k *= 2
    return steps + list(LAYOUT_ROTATION_STEPS)


def wire_params_hash(backend: str, params: HeParams) -> int:
    return zlib.crc32(f"{backend}|{params.params_id}".encode())


def wrap(magic: bytes, params_hash: int, payload: bytes) -> bytes:
    return _HEADER.pack(magic, params_hash, len(payload)) + payload


def unwrap(magic: bytes, data: bytes, params_hash: int) -> bytes:
    if len(data) < _HEADER.size:
        raise DecodeError("truncated header")
    got_magic, got_hash, length = _HEADER.unpack_from(data)
    if got_magic != magic:
        raise DecodeError(f"bad magic {got_magic!r}, expected {magic!r}")
    if got_hash != params_hash:
        raise DecodeError("parameter hash mismatch")
    payload = data[_HEADER.size:]
    if len(payload) != length:
        raise DecodeError(f"payload length {len(payload)} != declared {length}")
    return payload


def to_slots(values: Iterable[int] | np.ndarray, params: HeParams) -> np.ndarray:
    """Zero-pad ``values`` to a full row and reduce modulo the plaintext modulus."""
    arr = np.asarray(values, dtype=np.int64)
    n = params.slot_count
    if arr.ndim != 1 or arr.size > n:
        raise ValueError(f"slot vector must be 1-D with at most {n} entries")
    out = np.zeros(n, dtype=np.int64)
    out[: arr.size] = arr
    return np.mod(out, params.plain_modulus)


@dataclass(frozen=True, eq=False)
class HomomorphicVector:
    payload: Any
    mult_depth: int
    params_id: int
    backend: str


@dataclass(eq=False)
class KeyMaterial:
    params: HeParams
    backend: str
    public_key: Any
    relin_keys: Any
    galois_keys: Any
    secret_key: Any = field(default=None, repr=False)

    def public(self) -> "KeyMaterial":
        """Copy safe to hand to SP or TPS."""
        return replace(self, secret_key=None)


class Backend(ABC):
    name: ClassVar[str]

    def __init__(self, params: HeParams, keys: KeyMaterial | None = None):
        self.params = params
        self.counters: Counter[str] = Counter()
        self._keys: KeyMaterial | None = None
        if keys is not None:
            self.attach(keys)

    # -- keys ---------------------------------------------------------------

    def keygen(self, rotation_steps: list[int] | None = None) -> KeyMaterial:
        steps = rotation_steps or default_rotation_steps(self.params.slot_count)
        return self._keygen(steps)

    def attach(self, keys: KeyMaterial) -> None:
        """Bind public and evaluation keys. The secret key is never retained."""
        if keys.backend != self.name or keys.params.params_id != self.params.params_id:
            raise ParamsMismatchError("key material belongs to different parameters")
        self._keys = keys.public()
        self._on_attach(self._keys)

    @property
    def keys(self) -> KeyMaterial:
        if self._keys is None:
            raise MissingKeyError("no key material attached")
        return self._keys

    def dump_key(self, kind: str, keys: KeyMaterial) -> bytes:
        if kind == "secret":
            raise PermissionError("secret keys are written only through export_secret_key")
        return self._wrap_key(kind, keys)

    def export_secret_key(self, keys: KeyMaterial, reason: str) -> bytes:
        if keys.secret_key is None:
            raise MissingKeyError("key material carries no secret key")
        audit_log.warning("secret key export (backend=%s, params=%08x): %s",
                          self.name, self.params.params_id, reason)
        return self._wrap_key("secret", keys)

    def _wrap_key(self, kind: str, keys: KeyMaterial) -> bytes:
        attr = {"public": "public_key", "secret": "secret_key",
                "relin": "relin_keys", "galois": "galois_keys"}[kind]
        payload = self._dump_key_payload(kind, getattr(keys, attr))
        return wrap(KEY_MAGICS[kind], wire_params_hash(self.name, self.params), payload)

    def load_key(self, kind: str, data: bytes) -> Any:
        payload = unwrap(KEY_MAGICS[kind], data, wire_params_hash(self.name, self.params))
        try:
            return self._load_key_payload(kind, payload)
        except DecodeError:
            raise
        except Exception as exc:
            raise DecodeError(f"malformed {kind} key: {exc}") from exc

    # -- arithmetic -----------------------------------------------------------

    def plaintext(self, values) -> np.ndarray:
        return to_slots(values, self.params)

    def encrypt(self, values) -> HomomorphicVector:
        self.counters["encrypt"] += 1
        return self._new(self._encrypt(self.plaintext(values)), 0)

    def decrypt(self, c: HomomorphicVector, secret_key: Any) -> np.ndarray:
        self._check(c)
        if secret_key is None:
            raise MissingKeyError("decryption requires the secret key")
        self.counters["decrypt"] += 1
        return self._decrypt(c.payload, secret_key)

    def add(self, a: HomomorphicVector, b: HomomorphicVector) -> HomomorphicVector:
        self._check(a, b)
        self.counters["add"] += 1
        return self._new(self._add(a.payload, b.payload), max(a.mult_depth, b.mult_depth))

    def sub(self, a: HomomorphicVector, b: HomomorphicVector) -> HomomorphicVector:
        self._check(a, b)
        self.counters["sub"] += 1
        return self._new(self._sub(a.payload, b.payload), max(a.mult_depth, b.mult_depth))

    def add_plain(self, a: HomomorphicVector, p) -> HomomorphicVector:
        self._check(a)
        self.counters["add_plain"] += 1
        return self._new(self._add_plain(a.payload, self.plaintext(p)), a.mult_depth)

    def sub_plain(self, a: HomomorphicVector, p) -> HomomorphicVector:
        self._check(a)
        self.counters["sub_plain"] += 1
        return self._new(self._sub_plain(a.payload, self.plaintext(p)), a.mult_depth)

    def mul(self, a: HomomorphicVector, b: HomomorphicVector) -> HomomorphicVector:
        self._check(a, b)
        if self.keys.relin_keys is None:
            raise MissingKeyError("relinearization keys required for ciphertext multiply")
        self.counters["mul"] += 1
        depth = max(a.mult_depth, b.mult_depth) + 1
        return self._new(self._mul(a.payload, b.payload), depth)

    def mul_plain(self, a: HomomorphicVector, p) -> HomomorphicVector:
        self._check(a)
        self.counters["mul_plain"] += 1
        return self._new(self._mul_plain(a.payload, self.plaintext(p)), a.mult_depth + 1)

    def rotate_left(self, c: HomomorphicVector, k: int) -> HomomorphicVector:
        """Slot ``i`` of the result holds slot ``i + k`` of ``c`` (cyclically)."""
        self._check(c)
        k %= self.params.slot_count
        if k == 0:
            return c
        self.counters["rotate"] += 1
        return self._new(self._rotate_left(c.payload, k), c.mult_depth)

    def rotate_right(self, c: HomomorphicVector, k: int) -> HomomorphicVector:
        return self.rotate_left(c, -k)

    def noise_budget(self, c: HomomorphicVector, secret_key: Any) -> float:
        self._check(c)
        return self._noise_budget(c.payload, secret_key)

    # -- serialization --------------------------------------------------------

    def serialize(self, c: HomomorphicVector) -> bytes:
        self._check(c)
        return wrap(CIPHERTEXT_MAGIC, wire_params_hash(self.name, self.params),
                    self._dump_ciphertext(c.payload))

    def deserialize(self, data: bytes, mult_depth: int = 0) -> HomomorphicVector:
        """Decode a wrapped ciphertext. Depth is not carried on the wire."""
        payload = unwrap(CIPHERTEXT_MAGIC, data, wire_params_hash(self.name, self.params))
        try:
            native = self._load_ciphertext(payload)
        except DecodeError:
            raise
        except Exception as exc:
            raise DecodeError(f"malformed ciphertext: {exc}") from exc
        return self._new(native, mult_depth)

    # -- helpers --------------------------------------------------------------

    def _new(self, payload, depth: int) -> HomomorphicVector:
        return HomomorphicVector(payload, depth, self.params.params_id, self.name)

    def _check(self, *cts: HomomorphicVector) -> None:
        for c in cts:
            if c.backend != self.name or c.params_id != self.params.params_id:
                raise ParamsMismatchError(
                    f"ciphertext from {c.backend}/{c.params_id:08x} used with "
                    f"{self.name}/{self.params.params_id:08x}")

    # -- backend hooks --------------------------------------------------------

    @abstractmethod
    def _keygen(self, rotation_steps: list[int]) -> KeyMaterial: ...

    def _on_attach(self, keys: KeyMaterial) -> None:
        pass

    @abstractmethod
    def _dump_key_payload(self, kind: str, key: Any) -> bytes: ...

    @abstractmethod
    def _load_key_payload(self, kind: str, payload: bytes) -> Any: ...

    @abstractmethod
    def _encrypt(self, slots: np.ndarray): ...

    @abstractmethod
    def _decrypt(self, payload, secret_key) -> np.ndarray: ...

    @abstractmethod
    def _add(self, a, b): ...

    @abstractmethod
    def _sub(self, a, b): ...

    @abstractmethod
    def _add_plain(self, a, p: np.ndarray): ...

    @abstractmethod
    def _sub_plain(self, a, p: np.ndarray): ...

    @abstractmethod
    def _mul(self, a, b): ...

    @abstractmethod
    def _mul_plain(self, a, p: np.ndarray): ...

    @abstractmethod
    def _rotate_left(self, a, k: int): ...

    @abstractmethod
    def _noise_budget(self, payload, secret_key) -> float: ...

    @abstractmethod
    def _dump_ciphertext(self, payload) -> bytes: ...

    @abstractmethod
    def _load_ciphertext(self, payload: bytes): ...


def plan_rotation(k: int, available: set[int], slot_count: int) -> list[int]:
    """Express a left rotation by ``k`` as left rotations with available keys.

    ``available`` holds normalized left steps in ``[1, slot_count)``; a right
    rotation by ``j`` is the left step ``slot_count - j``.
    """
    k %= slot_count
    if k == 0:
        return []
    if k in available:
        return [k]
    plans = []
    left = [1 << i for i in range(k.bit_length()) if k >> i & 1]
    if all(s in available for s in left):
        plans.append(left)
    j = slot_count - k
    right = [slot_count - (1 << i) for i in range(j.bit_length()) if j >> i & 1]
    if all(s in available for s in right):
        plans.append(right)
    if not plans:
        raise MissingKeyError(f"no rotation key path for step {k}")
    return min(plans, key=len)
