"""Key files on disk: one wrapped key per file, named by kind."""

from __future__ import annotations

import os
from pathlib import Path

from ..backend import Backend, KeyMaterial
from ..errors import MissingKeyError
from . import roles

KEY_FILES = {
    "public": "public.key",
    "relin": "relin.key",
    "galois": "galois.key",
    "secret": "secret.key",
}


def _write(path: Path, data: bytes, private: bool = False) -> None:
    tmp = path.with_name(path.name + ".tmp")
    flags = os.O_WRONLY | os.O_CREAT | os.O_TRUNC
    fd = os.open(tmp, flags, 0o600 if private else 0o644)
    with os.fdopen(fd, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def save_keys(backend: Backend, keys: KeyMaterial, directory, include_secret: bool = True) -> dict:
    roles.require("keygen")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = {}
    for kind in ("public", "relin", "galois"):
        path = directory / KEY_FILES[kind]
        _write(path, backend.dump_key(kind, keys))
        written[kind] = path
    if include_secret:
        path = directory / KEY_FILES["secret"]
        _write(path, backend.export_secret_key(keys, f"key file {path}"), private=True)
        written["secret"] = path
    return written


def load_keys(backend: Backend, directory, kinds=("public", "relin", "galois")) -> KeyMaterial:
    """Load evaluation keys for a backend. The secret key is never loaded here."""
    directory = Path(directory)
    loaded = {}
    for kind in kinds:
        if kind == "secret":
            raise ValueError("use load_secret_key for the secret key")
        path = directory / KEY_FILES[kind]
        if not path.exists():
            raise MissingKeyError(f"missing {kind} key file {path}")
        loaded[kind] = backend.load_key(kind, path.read_bytes())
    return KeyMaterial(backend.params, backend.name,
                       public_key=loaded.get("public"),
                       relin_keys=loaded.get("relin"),
                       galois_keys=loaded.get("galois"))


def load_secret_key(backend: Backend, directory):
    roles.require("decrypt")
    path = Path(directory) / KEY_FILES["secret"]
    if not path.exists():
        raise MissingKeyError(f"missing secret key file {path}")
    return backend.load_key("secret", path.read_bytes())
