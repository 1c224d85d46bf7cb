"""TPS storage: opaque ciphertext pairs keyed by user id."""

from __future__ import annotations

import logging
import os
import struct
import tempfile
import threading
from pathlib import Path

from ..errors import DecodeError

log = logging.getLogger(__name__)
audit_log = logging.getLogger("ppid.audit")

_RECORD_MAGIC = b"PREC"
_LEN = struct.Struct("<I")


def _pack(demographic: bytes, biometric: bytes) -> bytes:
    return b"".join([_RECORD_MAGIC, _LEN.pack(len(demographic)), demographic,
                     _LEN.pack(len(biometric)), biometric])


def _unpack(data: bytes) -> tuple[bytes, bytes]:
    if data[:4] != _RECORD_MAGIC:
        raise DecodeError("store record has bad magic")
    out = []
    offset = 4
    for _ in range(2):
        if offset + 4 > len(data):
            raise DecodeError("store record truncated")
        (n,) = _LEN.unpack_from(data, offset)
        offset += 4
        out.append(data[offset:offset + n])
        if len(out[-1]) != n:
            raise DecodeError("store record truncated")
        offset += n
    if offset != len(data):
        raise DecodeError("trailing bytes in store record")
    return out[0], out[1]


class TpsStore:
    """One file per user, replaced atomically so a crash never leaves a torn record."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _path(self, user_id: bytes) -> Path:
        if len(user_id) != 16:
            raise ValueError("user_id must be 16 bytes")
        return self.directory / f"{user_id.hex()}.rec"

    def put(self, user_id: bytes, demographic: bytes, biometric: bytes) -> bool:
        """Store a record; returns True if it replaced an existing one."""
        path = self._path(user_id)
        data = _pack(demographic, biometric)
        with self._lock:
            replaced = path.exists()
            fd, tmp = tempfile.mkstemp(dir=self.directory, prefix=".tmp-")
            try:
                with os.fdopen(fd, "wb") as fh:
                    fh.write(data)
                    fh.flush()
                    os.fsync(fh.fileno())
                os.replace(tmp, path)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise
        if replaced:
            audit_log.info("re-enrollment replaced record for user %s", user_id.hex())
        return replaced

    def get(self, user_id: bytes) -> tuple[bytes, bytes] | None:
        try:
            data = self._path(user_id).read_bytes()
        except FileNotFoundError:
            return None
        return _unpack(data)

    def __contains__(self, user_id: bytes) -> bool:
        return self._path(user_id).exists()

    def __len__(self) -> int:
        return sum(1 for _ in self.directory.glob("*.rec"))
