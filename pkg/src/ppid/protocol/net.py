"""Socket services for TPS and CS, and the SP client.

Query flow on the wire:

1. SP opens a connection to CS and sends the query header (QUERY, no
   payloads). CS registers the query id and echoes the header back.
2. SP sends the full QUERY to TPS. TPS evaluates, forwards a TPS_RESULT (or
   an ERROR for an unknown user) to CS on a fresh connection, then echoes the
   header to SP.
3. CS decrypts, checks, and answers SP with a VERDICT on the connection from
   step 1.
"""

from __future__ import annotations

import hashlib
import json
import logging
import socket
import socketserver
import threading
import time
from pathlib import Path

from ..errors import DecodeError, PpidError, ProtocolError, TransportError
from ..queries import QueryKind, Status
from .parties import CentralServer, ThirdPartyServer, Verdict, announce_frame
from .wire import (
    Frame,
    MsgType,
    Reason,
    connect,
    error_frame,
    parse_address,
    parse_error_payload,
    parse_verdict_payload,
    read_frame,
    write_frame,
)

log = logging.getLogger(__name__)
audit_log = logging.getLogger("ppid.audit")

DEFAULT_TIMEOUT = 60.0


class TranscriptRecorder:
    """Append-only JSONL log of every frame TPS receives or emits.

    Payloads are recorded by magic, length and digest, never by content.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def record(self, direction: str, frame: Frame) -> None:
        entry = {
            "direction": direction,
            "msg_type": frame.msg_type.name,
            "query_id": f"{frame.query_id:016x}",
            "user_id": frame.user_id.hex(),
            "kind": frame.kind,
            "payloads": [{"magic": p[:4].hex(), "length": len(p),
                          "sha256": hashlib.sha256(p).hexdigest()} for p in frame.payloads],
        }
        line = json.dumps(entry, sort_keys=True)
        with self._lock, self.path.open("a", encoding="utf-8") as fh:
            fh.write(line + "\n")


class _Server(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class _Service:
    def __init__(self, address: str, handler_cls):
        self._server = _Server(parse_address(address), handler_cls)
        self._server.service = self
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> str:
        host, port = self._server.server_address[:2]
        return f"{host}:{port}"

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def start(self) -> "_Service":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def shutdown(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join()


# -- TPS --------------------------------------------------------------------------


class _TpsHandler(socketserver.BaseRequestHandler):
    def handle(self):
        svc: TpsService = self.server.service
        sock = self.request
        sock.settimeout(svc.timeout)
        while True:
            try:
                frame = read_frame(sock)
            except (ConnectionError, socket.timeout):
                return
            except ProtocolError as exc:
                svc._send(sock, error_frame(Reason.PROTOCOL_ERROR, str(exc)))
                return
            svc._record("in", frame)
            reply = svc.dispatch(frame)
            if reply is not None:
                svc._send(sock, reply)


class TpsService(_Service):
    def __init__(self, address: str, tps: ThirdPartyServer, cs_address: str,
                 transcript: TranscriptRecorder | None = None, timeout: float = DEFAULT_TIMEOUT):
        super().__init__(address, _TpsHandler)
        self.tps = tps
        self.cs_address = cs_address
        self.transcript = transcript
        self.timeout = timeout

    def _record(self, direction, frame):
        if self.transcript is not None:
            self.transcript.record(direction, frame)

    def _send(self, sock, frame):
        self._record("out", frame)
        try:
            write_frame(sock, frame)
        except OSError as exc:
            log.warning("reply failed: %s", exc)

    def dispatch(self, frame: Frame) -> Frame | None:
        try:
            if frame.msg_type is MsgType.ENROLL:
                return self.tps.handle_enroll(frame)
            if frame.msg_type is MsgType.QUERY:
                return self._query(frame)
            # Verdicts and results never belong at TPS.
            audit_log.warning("TPS rejected unexpected %s frame", frame.msg_type.name)
            raise ProtocolError(f"TPS does not accept {frame.msg_type.name}")
        except (ProtocolError, DecodeError) as exc:
            return error_frame(Reason.PROTOCOL_ERROR, str(exc), frame.query_id, frame.user_id,
                               frame.kind)
        except PpidError as exc:
            log.exception("evaluation failed")
            return error_frame(Reason.EVALUATION_ERROR, type(exc).__name__, frame.query_id,
                               frame.user_id, frame.kind)

    def _query(self, frame: Frame) -> Frame:
        result = self.tps.handle_query(frame)
        try:
            with connect(self.cs_address, self.timeout) as cs:
                self._record("out", result)
                write_frame(cs, result)
        except (TransportError, OSError) as exc:
            return error_frame(Reason.UNAVAILABLE, f"CS unreachable: {exc}", frame.query_id,
                               frame.user_id, frame.kind)
        return announce_frame(frame)


# -- CS ----------------------------------------------------------------------------


class _CsHandler(socketserver.BaseRequestHandler):
    def handle(self):
        svc: CsService = self.server.service
        sock = self.request
        sock.settimeout(svc.timeout)
        try:
            frame = read_frame(sock)
        except (ConnectionError, socket.timeout):
            return
        except ProtocolError as exc:
            _try_send(sock, error_frame(Reason.PROTOCOL_ERROR, str(exc)))
            return
        if frame.msg_type is MsgType.QUERY and not frame.payloads:
            svc.serve_sp(sock, frame)
        elif frame.msg_type in (MsgType.TPS_RESULT, MsgType.ERROR):
            svc.accept_result(frame)
        else:
            _try_send(sock, error_frame(Reason.PROTOCOL_ERROR,
                                        f"CS does not accept {frame.msg_type.name}",
                                        frame.query_id, frame.user_id, frame.kind))


def _try_send(sock, frame):
    try:
        write_frame(sock, frame)
    except OSError as exc:
        log.warning("reply failed: %s", exc)


class CsService(_Service):
    def __init__(self, address: str, cs: CentralServer, timeout: float = DEFAULT_TIMEOUT):
        super().__init__(address, _CsHandler)
        self.cs = cs
        self.timeout = timeout
        self._lock = threading.Lock()
        self._waiters: dict[int, tuple[threading.Event, list]] = {}

    def serve_sp(self, sock, header: Frame) -> None:
        try:
            self.cs.expect(header.query_id, header.user_id, header.kind)
        except ProtocolError as exc:
            _try_send(sock, error_frame(Reason.PROTOCOL_ERROR, str(exc), header.query_id,
                                        header.user_id, header.kind))
            return
        event, box = threading.Event(), []
        with self._lock:
            self._waiters[header.query_id] = (event, box)
        try:
            write_frame(sock, header)
            if event.wait(self.timeout):
                verdict = box[0]
            else:
                verdict = Verdict(header.query_id, header.user_id, QueryKind(header.kind),
                                  Status.FAIL, Reason.TIMEOUT)
            write_frame(sock, verdict.to_frame())
        except OSError as exc:
            log.warning("SP connection lost for query %016x: %s", header.query_id, exc)
        finally:
            with self._lock:
                self._waiters.pop(header.query_id, None)

    def accept_result(self, frame: Frame) -> None:
        verdict = self.cs.handle(frame)
        if verdict is None:
            return
        with self._lock:
            waiter = self._waiters.get(frame.query_id)
        if waiter is None:
            audit_log.warning("no SP waiting for query %016x", frame.query_id)
            return
        event, box = waiter
        box.append(verdict)
        event.set()


# -- SP client ---------------------------------------------------------------------


def send_enrollments(tps_address: str, frames, timeout: float = DEFAULT_TIMEOUT) -> int:
    """Push ENROLL frames over one connection; returns the number acknowledged."""
    count = 0
    with connect(tps_address, timeout) as sock:
        for frame in frames:
            write_frame(sock, frame)
            reply = read_frame(sock)
            if reply.msg_type is MsgType.ERROR:
                reason, msg = parse_error_payload(reply)
                raise ProtocolError(f"TPS rejected enrollment ({reason.name}): {msg}")
            if reply.msg_type is not MsgType.ENROLL or reply.user_id != frame.user_id:
                raise ProtocolError("unexpected enrollment acknowledgement")
            count += 1
    return count


def sp_query(query: Frame, cs_address: str, tps_address: str,
             timeout: float = DEFAULT_TIMEOUT) -> Verdict:
    with connect(cs_address, timeout) as cs:
        write_frame(cs, announce_frame(query))
        ack = read_frame(cs)
        if ack.msg_type is MsgType.ERROR:
            reason, msg = parse_error_payload(ack)
            raise ProtocolError(f"CS refused query ({reason.name}): {msg}")
        with connect(tps_address, timeout) as tps:
            write_frame(tps, query)
            reply = read_frame(tps)
        if reply.msg_type is MsgType.ERROR:
            reason, msg = parse_error_payload(reply)
            if reason is Reason.UNAVAILABLE:
                raise TransportError(msg)
            raise ProtocolError(f"TPS refused query ({reason.name}): {msg}")
        frame = read_frame(cs)
    if frame.query_id != query.query_id:
        raise ProtocolError("verdict for a different query")
    status, reason = parse_verdict_payload(frame)
    return Verdict(frame.query_id, frame.user_id, QueryKind(frame.kind), Status(status), reason)


def wait_for(address: str, timeout: float = 30.0) -> None:
    """Block until something accepts connections at ``address``."""
    deadline = time.monotonic() + timeout
    while True:
        try:
            socket.create_connection(parse_address(address), timeout=1.0).close()
            return
        except OSError:
            if time.monotonic() > deadline:
                raise TransportError(f"{address} did not come up within {timeout}s")
            time.sleep(0.05)
