"""Message handling for the three parties, independent of transport.

CS encrypts enrollments and turns TPS results into verdicts. TPS stores
ciphertexts and evaluates queries on them. SP encodes and encrypts queries.
Only CS ever holds the secret key.
"""

from __future__ import annotations

import datetime as dt
import logging
import secrets
import threading
from collections import OrderedDict
from dataclasses import dataclass

from ..backend import Backend
from ..encoding import (
    QuantizationConfig,
    UserRecord,
    encode_demographic,
    encode_dob_query,
    encode_field_query,
    encode_fingercode,
    validate_record,
)
from ..errors import DecodeError, DecryptionIntegrityError, PpidError, ProtocolError
from ..queries import DobQuery, QueryConfig, QueryKind, Status, cs_extended_decrypt, tps_evaluate
from . import roles
from .store import TpsStore
from .wire import Frame, MsgType, Reason, error_frame, parse_error_payload, verdict_payload

log = logging.getLogger(__name__)
audit_log = logging.getLogger("ppid.audit")

_SEEN_LIMIT = 65536


@dataclass(frozen=True)
class Verdict:
    query_id: int
    user_id: bytes
    kind: QueryKind
    status: Status
    reason: Reason = Reason.OK

    def to_frame(self) -> Frame:
        return Frame(MsgType.VERDICT, self.query_id, self.user_id, self.kind,
                     (verdict_payload(self.status, self.reason),))


def parse_kind(value: int) -> QueryKind:
    try:
        return QueryKind(value)
    except ValueError:
        raise ProtocolError(f"unknown query kind {value}") from None


def enroll_frame(backend: Backend, record: UserRecord, cfg: QueryConfig,
                 qcfg: QuantizationConfig) -> Frame:
    """Encode and encrypt one record. Invalid records fail before any encryption."""
    roles.require("enroll")
    validate_record(record)
    demographic = encode_demographic(record, cfg.layout)
    biometric = encode_fingercode(record.fingercode, qcfg)
    payloads = (backend.serialize(backend.encrypt(demographic)),
                backend.serialize(backend.encrypt(biometric)))
    return Frame(MsgType.ENROLL, 0, record.user_id, 0, payloads)


class CentralServer:
    def __init__(self, backend: Backend, secret_key, cfg: QueryConfig, qcfg: QuantizationConfig,
                 backup: TpsStore | None = None):
        roles.require("decrypt")
        self.backend = backend
        self._secret_key = secret_key
        self.cfg = cfg
        self.qcfg = qcfg
        self.backup = backup
        self._lock = threading.Lock()
        self._pending: dict[int, tuple[bytes, QueryKind]] = {}
        self._done: OrderedDict[int, None] = OrderedDict()

    def enroll_frame(self, record: UserRecord) -> Frame:
        frame = enroll_frame(self.backend, record, self.cfg, self.qcfg)
        if self.backup is not None:
            self.backup.put(record.user_id, *frame.payloads)
        return frame

    def expect(self, query_id: int, user_id: bytes, kind: int) -> None:
        """Register a query announced by SP so its result is accepted exactly once."""
        kind = parse_kind(kind)
        with self._lock:
            if query_id in self._pending or query_id in self._done:
                raise ProtocolError(f"query id {query_id:016x} already in use")
            self._pending[query_id] = (user_id, kind)

    def handle(self, frame: Frame) -> Verdict | None:
        """Turn a TPS result or error into a verdict; None if the frame is dropped."""
        with self._lock:
            expected = self._pending.pop(frame.query_id, None)
            if expected is None:
                replay = frame.query_id in self._done
                audit_log.warning("dropped %s for %s query id %016x",
                                  frame.msg_type.name, "replayed" if replay else "unknown",
                                  frame.query_id)
                return None
            self._done[frame.query_id] = None
            while len(self._done) > _SEEN_LIMIT:
                self._done.popitem(last=False)
        user_id, kind = expected
        if frame.user_id != user_id or frame.kind != kind:
            verdict = Verdict(frame.query_id, user_id, kind, Status.FAIL, Reason.PROTOCOL_ERROR)
        elif frame.msg_type is MsgType.ERROR:
            reason, _ = parse_error_payload(frame)
            verdict = Verdict(frame.query_id, user_id, kind, Status.FAIL, reason)
        elif frame.msg_type is MsgType.TPS_RESULT and len(frame.payloads) == 1:
            verdict = self._decide(frame, user_id, kind)
        else:
            verdict = Verdict(frame.query_id, user_id, kind, Status.FAIL, Reason.PROTOCOL_ERROR)
        log.info("verdict query=%016x user=%s kind=%s status=%s reason=%s", verdict.query_id,
                 user_id.hex(), kind.name, verdict.status.name, verdict.reason.name)
        return verdict

    def _decide(self, frame: Frame, user_id: bytes, kind: QueryKind) -> Verdict:
        try:
            out = self.backend.deserialize(frame.payloads[0])
            status = cs_extended_decrypt(self.backend, out, self._secret_key, self.cfg)
        except DecodeError:
            return Verdict(frame.query_id, user_id, kind, Status.FAIL, Reason.PROTOCOL_ERROR)
        except DecryptionIntegrityError:
            return Verdict(frame.query_id, user_id, kind, Status.FAIL, Reason.DECRYPTION_ERROR)
        return Verdict(frame.query_id, user_id, kind, status)


class ThirdPartyServer:
    def __init__(self, backend: Backend, store: TpsStore, cfg: QueryConfig):
        roles.require("evaluate")
        self.backend = backend
        self.store = store
        self.cfg = cfg

    def handle_enroll(self, frame: Frame) -> Frame:
        if frame.msg_type is not MsgType.ENROLL or len(frame.payloads) != 2:
            raise ProtocolError("enrollment carries exactly two ciphertexts")
        for p in frame.payloads:
            self.backend.deserialize(p)  # reject garbage before it reaches disk
        self.store.put(frame.user_id, *frame.payloads)
        log.info("enrolled user=%s", frame.user_id.hex())
        return Frame(MsgType.ENROLL, 0, frame.user_id, 0, ())

    def handle_query(self, frame: Frame) -> Frame:
        """Evaluate a query; the returned frame goes to CS.

        Malformed queries raise ProtocolError (answered to SP). An unknown
        user yields an ERROR frame so CS can close the query with a FAIL.
        """
        if frame.msg_type is not MsgType.QUERY:
            raise ProtocolError(f"expected QUERY, got {frame.msg_type.name}")
        kind = parse_kind(frame.kind)
        if len(frame.payloads) != kind.arity:
            raise ProtocolError(f"{kind.name} takes {kind.arity} payload(s), got {len(frame.payloads)}")
        payloads = [self.backend.deserialize(p) for p in frame.payloads]
        record = self.store.get(frame.user_id)
        if record is None:
            log.info("query=%016x user=%s not enrolled", frame.query_id, frame.user_id.hex())
            return error_frame(Reason.NOT_FOUND, "", frame.query_id, frame.user_id, kind)
        demographic, biometric = (self.backend.deserialize(r) for r in record)
        out = tps_evaluate(self.backend, kind, demographic, biometric, payloads, self.cfg)
        log.info("evaluated query=%016x user=%s kind=%s", frame.query_id, frame.user_id.hex(), kind.name)
        return Frame(MsgType.TPS_RESULT, frame.query_id, frame.user_id, kind,
                     (self.backend.serialize(out),))


class ServiceProvider:
    def __init__(self, backend: Backend, cfg: QueryConfig, qcfg: QuantizationConfig):
        roles.require("query")
        self.backend = backend
        self.cfg = cfg
        self.qcfg = qcfg

    def encode(self, kind: QueryKind, value) -> list:
        """Plaintext slot vectors for a query; raises before anything is encrypted."""
        if kind.is_demographic:
            return [encode_field_query(kind.field, value, self.cfg.layout)]
        if kind is QueryKind.DOB_AFTER:
            q = value if isinstance(value, DobQuery) else DobQuery(value)
            if not isinstance(q.date, dt.date):
                raise ValueError("date-of-birth query needs a date")
            return list(encode_dob_query(q.date, q.years_offset))
        return [encode_fingercode(value, self.qcfg)]

    def build_query(self, user_id: bytes, kind: QueryKind, value, query_id: int | None = None) -> Frame:
        if len(user_id) != 16:
            raise ValueError("user_id must be 16 bytes")
        slots = self.encode(kind, value)
        if query_id is None:
            query_id = secrets.randbits(64)
        payloads = tuple(self.backend.serialize(self.backend.encrypt(s)) for s in slots)
        return Frame(MsgType.QUERY, query_id, user_id, kind, payloads)


def announce_frame(query: Frame) -> Frame:
    """Header-only copy of a query that SP sends to CS."""
    return Frame(MsgType.QUERY, query.query_id, query.user_id, query.kind, ())


def run_local(sp: ServiceProvider, tps: ThirdPartyServer, cs: CentralServer,
              user_id: bytes, kind: QueryKind, value) -> Verdict:
    """Full query round trip in one process, with every message passed as wire bytes."""
    query = sp.build_query(user_id, kind, value)
    announce = Frame.decode(announce_frame(query).encode())
    cs.expect(announce.query_id, announce.user_id, announce.kind)
    try:
        result = tps.handle_query(Frame.decode(query.encode()))
    except PpidError as exc:
        result = error_frame(Reason.PROTOCOL_ERROR, str(exc), query.query_id, user_id, kind)
    verdict = cs.handle(Frame.decode(result.encode()))
    assert verdict is not None
    return verdict
