from __future__ import annotations

from ..errors import ConfigurationError
from ..params import HeParams
from .base import (
    CIPHERTEXT_MAGIC,
    KEY_MAGICS,
    Backend,
    HomomorphicVector,
    KeyMaterial,
    default_rotation_steps,
    plan_rotation,
    to_slots,
)
from .reference import ReferenceBackend

BACKENDS = ("seal", "reference")


def make_backend(name: str, params: HeParams, keys: KeyMaterial | None = None) -> Backend:
    if name == "reference":
        return ReferenceBackend(params, keys)
    if name == "seal":
        from .seal import SealBackend

        return SealBackend(params, keys)
    raise ConfigurationError(f"unknown backend {name!r}; choose from {BACKENDS}")


__all__ = [
    "BACKENDS",
    "CIPHERTEXT_MAGIC",
    "KEY_MAGICS",
    "Backend",
    "HomomorphicVector",
    "KeyMaterial",
    "ReferenceBackend",
    "default_rotation_steps",
    "make_backend",
    "plan_rotation",
    "to_slots",
]
