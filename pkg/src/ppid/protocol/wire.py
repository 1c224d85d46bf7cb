"""Binary wire format shared by SP, TPS and CS.

Frame (little-endian)::

    magic "PPID" | version u8 | msg_type u8 | query_id u64 | user_id 16B
    | query_kind u8 | payload_count u32 | payload_count x (len u32 | bytes)

On a stream each frame is preceded by its total length as a u32.
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass
from enum import IntEnum

from ..errors import ProtocolError, TransportError

MAGIC = b"PPID"
VERSION = 1
MAX_FRAME = 1 << 30
USER_ID_LEN = 16

_HEADER = struct.Struct("<4sBBQ16sBI")
_LEN = struct.Struct("<I")


class MsgType(IntEnum):
    ENROLL = 1
    QUERY = 2
    TPS_RESULT = 3
    VERDICT = 4
    ERROR = 5


class Reason(IntEnum):
    OK = 0
    NOT_FOUND = 1
    PROTOCOL_ERROR = 2
    EVALUATION_ERROR = 3
    DECRYPTION_ERROR = 4
    TIMEOUT = 5
    UNAVAILABLE = 6


@dataclass(frozen=True)
class Frame:
    msg_type: MsgType
    query_id: int = 0
    user_id: bytes = bytes(USER_ID_LEN)
    kind: int = 0
    payloads: tuple[bytes, ...] = ()

    def encode(self) -> bytes:
        if len(self.user_id) != USER_ID_LEN:
            raise ProtocolError("user_id must be 16 bytes")
        parts = [_HEADER.pack(MAGIC, VERSION, self.msg_type, self.query_id, self.user_id,
                              self.kind, len(self.payloads))]
        for p in self.payloads:
            parts += [_LEN.pack(len(p)), p]
        return b"".join(parts)

    @classmethod
    def decode(cls, data: bytes) -> "Frame":
        if len(data) < _HEADER.size:
            raise ProtocolError("frame shorter than header")
        magic, version, msg_type, query_id, user_id, kind, count = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise ProtocolError(f"bad frame magic {magic!r}")
        if version != VERSION:
            raise ProtocolError(f"unsupported protocol version {version}")
        try:
            msg_type = MsgType(msg_type)
        except ValueError:
            raise ProtocolError(f"unknown message type {msg_type}") from None
        view = memoryview(data)
        offset = _HEADER.size
        payloads = []
        for _ in range(count):
            if offset + _LEN.size > len(data):
                raise ProtocolError("truncated payload length")
            (n,) = _LEN.unpack_from(data, offset)
            offset += _LEN.size
            if offset + n > len(data):
                raise ProtocolError("truncated payload")
            payloads.append(bytes(view[offset:offset + n]))
            offset += n
        if offset != len(data):
            raise ProtocolError("trailing bytes after last payload")
        return cls(msg_type, query_id, user_id, kind, tuple(payloads))


def verdict_payload(status: int, reason: Reason) -> bytes:
    return bytes([int(status), int(reason)])


def parse_verdict_payload(frame: Frame) -> tuple[int, Reason]:
    if frame.msg_type is not MsgType.VERDICT or len(frame.payloads) != 1 or len(frame.payloads[0]) != 2:
        raise ProtocolError("malformed verdict")
    status, reason = frame.payloads[0]
    if status not in (0, 1):
        raise ProtocolError(f"bad verdict status {status}")
    return status, Reason(reason)


def error_frame(reason: Reason, message: str = "", query_id: int = 0,
                user_id: bytes = bytes(USER_ID_LEN), kind: int = 0) -> Frame:
    return Frame(MsgType.ERROR, query_id, user_id, kind,
                 (bytes([reason]) + message.encode("utf-8", "replace"),))


def parse_error_payload(frame: Frame) -> tuple[Reason, str]:
    if not frame.payloads or not frame.payloads[0]:
        return Reason.PROTOCOL_ERROR, ""
    raw = frame.payloads[0]
    try:
        reason = Reason(raw[0])
    except ValueError:
        reason = Reason.PROTOCOL_ERROR
    return reason, raw[1:].decode("utf-8", "replace")


# -- stream framing ------------------------------------------------------------------


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(min(n - len(buf), 1 << 20))
        if not chunk:
            raise ConnectionError("peer closed connection mid-frame" if buf else "peer closed connection")
        buf += chunk
    return bytes(buf)


def write_frame(sock: socket.socket, frame: Frame) -> None:
    data = frame.encode()
    sock.sendall(_LEN.pack(len(data)) + data)


def read_frame(sock: socket.socket) -> Frame:
    (n,) = _LEN.unpack(_recv_exact(sock, _LEN.size))
    if n > MAX_FRAME:
        raise ProtocolError(f"frame of {n} bytes exceeds limit")
    return Frame.decode(_recv_exact(sock, n))


def parse_address(address: str) -> tuple[str, int]:
    host, _, port = address.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address must be host:port, got {address!r}")
    return host, int(port)


def connect(address: str, timeout: float) -> socket.socket:
    try:
        return socket.create_connection(parse_address(address), timeout=timeout)
    except OSError as exc:
        raise TransportError(f"cannot reach {address}: {exc}") from exc
