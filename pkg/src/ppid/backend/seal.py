"""BFV backend on Microsoft SEAL (through TenSEAL's raw ``sealapi`` bindings)."""

from __future__ import annotations

import os
import tempfile
import threading
from collections import OrderedDict
from functools import cached_property

import numpy as np
import tenseal.sealapi as seal

from ..errors import ConfigurationError, DecryptionIntegrityError, MissingKeyError
from ..params import HeParams, SecurityLevel
from .base import Backend, KeyMaterial, plan_rotation

_SEC_LEVELS = {
    SecurityLevel.BITS_128: seal.SEC_LEVEL_TYPE.TC128,
    SecurityLevel.BITS_192: seal.SEC_LEVEL_TYPE.TC192,
    SecurityLevel.BITS_256: seal.SEC_LEVEL_TYPE.TC256,
}
_KEY_TYPES = {
    "public": seal.PublicKey,
    "secret": seal.SecretKey,
    "relin": seal.RelinKeys,
    "galois": seal.GaloisKeys,
}
_PLAIN_CACHE_SIZE = 64


def make_context(params: HeParams) -> seal.SEALContext:
    level = _SEC_LEVELS[params.security_level]
    parms = seal.EncryptionParameters(seal.SCHEME_TYPE.BFV)
    parms.set_poly_modulus_degree(params.poly_modulus_degree)
    parms.set_coeff_modulus(seal.CoeffModulus.BFVDefault(params.poly_modulus_degree, level))
    parms.set_plain_modulus(seal.Modulus(params.plain_modulus))
    ctx = seal.SEALContext(parms, True, level)
    if not ctx.parameters_set():
        raise ConfigurationError(f"SEAL rejected parameters: {ctx.parameters_error_message()}")
    return ctx


def coeff_modulus_bits(params: HeParams) -> list[int]:
    level = _SEC_LEVELS[params.security_level]
    return [m.bit_count() for m in seal.CoeffModulus.BFVDefault(params.poly_modulus_degree, level)]


def _save(obj) -> bytes:
    fd, path = tempfile.mkstemp(prefix="ppid-")
    os.close(fd)
    try:
        obj.save(path)
        with open(path, "rb") as fh:
            return fh.read()
    finally:
        os.unlink(path)


def _load(obj, ctx, data: bytes):
    fd, path = tempfile.mkstemp(prefix="ppid-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        obj.load(ctx, path)
    finally:
        os.unlink(path)
    return obj


class SealBackend(Backend):
    name = "seal"

    def __init__(self, params: HeParams, keys: KeyMaterial | None = None):
        self.context = make_context(params)
        self._evaluator = seal.Evaluator(self.context)
        self._encoder = seal.BatchEncoder(self.context)
        self._plain_cache: OrderedDict[bytes, seal.Plaintext] = OrderedDict()
        self._decryptors: dict[int, tuple[object, seal.Decryptor]] = {}
        self._lock = threading.Lock()
        self._encryptor = None
        super().__init__(params, keys)

    @cached_property
    def _galois_elts(self) -> dict[int, int]:
        m = 2 * self.params.poly_modulus_degree
        return {k: pow(3, k, m) for k in range(1, self.params.slot_count)}

    # -- keys ---------------------------------------------------------------

    def _keygen(self, rotation_steps):
        kg = seal.KeyGenerator(self.context)
        pk = seal.PublicKey()
        kg.create_public_key(pk)
        rk = seal.RelinKeys()
        kg.create_relin_keys(rk)
        gk = seal.GaloisKeys()
        # Pass Galois elements, not steps: the step overload is ambiguous in the bindings.
        n = self.params.slot_count
        elts = sorted({self._galois_elts[k % n] for k in rotation_steps if k % n})
        kg.create_galois_keys(elts, gk)
        return KeyMaterial(self.params, self.name, public_key=pk, relin_keys=rk,
                           galois_keys=gk, secret_key=kg.secret_key())

    def _on_attach(self, keys):
        if keys.public_key is not None:
            self._encryptor = seal.Encryptor(self.context, keys.public_key)
        gk = keys.galois_keys
        self._steps = set()
        if gk is not None:
            self._steps = {k for k, elt in self._galois_elts.items() if gk.has_key(elt)}

    def _dump_key_payload(self, kind, key):
        return _save(key)

    def _load_key_payload(self, kind, payload):
        return _load(_KEY_TYPES[kind](), self.context, payload)

    # -- encoding -------------------------------------------------------------

    def _plain(self, slots: np.ndarray) -> seal.Plaintext:
        key = slots.tobytes()
        with self._lock:
            pt = self._plain_cache.get(key)
            if pt is not None:
                self._plain_cache.move_to_end(key)
                return pt
        row = slots.tolist()
        pt = seal.Plaintext()
        self._encoder.encode(row + [0] * len(row), pt)
        with self._lock:
            self._plain_cache[key] = pt
            if len(self._plain_cache) > _PLAIN_CACHE_SIZE:
                self._plain_cache.popitem(last=False)
        return pt

    def _decryptor(self, secret_key) -> seal.Decryptor:
        with self._lock:
            entry = self._decryptors.get(id(secret_key))
            if entry is None or entry[0] is not secret_key:
                entry = (secret_key, seal.Decryptor(self.context, secret_key))
                self._decryptors[id(secret_key)] = entry
            return entry[1]

    # -- arithmetic -------------------------------------------------------------

    def _encrypt(self, slots):
        if self._encryptor is None:
            raise MissingKeyError("public key required for encryption")
        ct = seal.Ciphertext()
        self._encryptor.encrypt(self._plain(slots), ct)
        return ct

    def _decrypt(self, payload, secret_key):
        dec = self._decryptor(secret_key)
        if dec.invariant_noise_budget(payload) <= 0:
            raise DecryptionIntegrityError("noise budget exhausted; plaintext unrecoverable")
        pt = seal.Plaintext()
        dec.decrypt(payload, pt)
        row = self._encoder.decode_uint64(pt)[: self.params.slot_count]
        return np.asarray(row, dtype=np.int64)

    def _binary(self, op, a, b):
        out = seal.Ciphertext()
        try:
            op(a, b, out)
        except RuntimeError as exc:
            if "transparent" not in str(exc):
                raise
            # e.g. a - a; rerandomize with a fresh encryption of zero.
            fresh = self._encrypt(np.zeros(self.params.slot_count, dtype=np.int64))
            self._evaluator.add(a, fresh, out)
            op(out, b, out)
        return out

    def _add(self, a, b):
        return self._binary(self._evaluator.add, a, b)

    def _sub(self, a, b):
        return self._binary(self._evaluator.sub, a, b)

    def _add_plain(self, a, p):
        return self._binary(self._evaluator.add_plain, a, self._plain(p))

    def _sub_plain(self, a, p):
        return self._binary(self._evaluator.sub_plain, a, self._plain(p))

    def _mul(self, a, b):
        out = self._binary(self._evaluator.multiply, a, b)
        self._evaluator.relinearize_inplace(out, self.keys.relin_keys)
        return out

    def _mul_plain(self, a, p):
        first = int(p[0])
        if np.all(p == first):
            # Constant operands: 1 and -1 are exact and noise-free as copy/negation.
            if first == 1:
                return a
            if first == self.params.plain_modulus - 1:
                out = seal.Ciphertext()
                self._evaluator.negate(a, out)
                return out
            if first == 0:
                # SEAL refuses to emit a transparent ciphertext; re-encrypt zero.
                return self._encrypt(p)
        return self._binary(self._evaluator.multiply_plain, a, self._plain(p))

    def _rotate_left(self, a, k):
        gk = self.keys.galois_keys
        if gk is None:
            raise MissingKeyError("rotation keys required")
        for step in plan_rotation(k, self._steps, self.params.slot_count):
            out = seal.Ciphertext()
            self._evaluator.rotate_rows(a, step, gk, out)
            a = out
        return a

    def _noise_budget(self, payload, secret_key):
        return self._decryptor(secret_key).invariant_noise_budget(payload)

    # -- serialization --------------------------------------------------------

    def _dump_ciphertext(self, payload):
        return _save(payload)

    def _load_ciphertext(self, payload):
        ct = _load(seal.Ciphertext(), self.context, payload)
        if ct.size() < 2 or not seal.is_valid_for(ct, self.context):
            raise ValueError("ciphertext not valid for context")
        return ct
