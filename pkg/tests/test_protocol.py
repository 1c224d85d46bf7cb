import datetime as dt
import json
import logging
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ppid.backend import make_backend
from ppid.encoding import QuantizationConfig
from ppid.errors import CapabilityError, EncodingError, MissingKeyError, ProtocolError
from ppid.protocol import (
    CentralServer,
    Frame,
    MsgType,
    Reason,
    ServiceProvider,
    ThirdPartyServer,
    TpsStore,
    announce_frame,
    enroll_frame,
    roles,
)
from ppid.protocol.keys import KEY_FILES, load_keys, load_secret_key, save_keys
from ppid.protocol.net import CsService, TpsService, TranscriptRecorder, send_enrollments, sp_query
from ppid.protocol.wire import error_frame, parse_error_payload, parse_verdict_payload, read_frame, write_frame
from ppid.queries import DobQuery, QueryKind, Status
from ppid.synthetic import random_record

from corpus import Pipeline

frames = st.builds(
    Frame,
    st.sampled_from(list(MsgType)),
    st.integers(0, 2**64 - 1),
    st.binary(min_size=16, max_size=16),
    st.integers(0, 255),
    st.lists(st.binary(max_size=64), max_size=4).map(tuple),
)


# -- wire format ---------------------------------------------------------------------


@given(frames)
def test_frame_roundtrip(frame):
    assert Frame.decode(frame.encode()) == frame


def test_frame_layout_is_little_endian():
    f = Frame(MsgType.VERDICT, 0x0102030405060708, bytes(range(16)), 6, (b"\x01\x00",))
    data = f.encode()
    assert data[:4] == b"PPID" and data[4] == 1 and data[5] == 4
    assert data[6:14] == bytes([8, 7, 6, 5, 4, 3, 2, 1])
    assert data[14:30] == bytes(range(16)) and data[30] == 6
    assert struct.unpack_from("<I", data, 31) == (1,)
    assert struct.unpack_from("<I", data, 35) == (2,) and data[39:] == b"\x01\x00"
    assert parse_verdict_payload(f) == (1, Reason.OK)


@pytest.mark.parametrize("mutate,msg", [
    (lambda d: b"XPID" + d[4:], "magic"),
    (lambda d: d[:4] + b"\x02" + d[5:], "version"),
    (lambda d: d[:5] + b"\x09" + d[6:], "message type"),
    (lambda d: d[:-1], "truncated"),
    (lambda d: d + b"\x00", "trailing"),
    (lambda d: d[:20], "shorter"),
])
def test_malformed_frames(mutate, msg):
    data = Frame(MsgType.QUERY, 1, bytes(16), 1, (b"abc",)).encode()
    with pytest.raises(ProtocolError, match=msg):
        Frame.decode(mutate(data))


def test_user_id_length_enforced():
    with pytest.raises(ProtocolError):
        Frame(MsgType.QUERY, 1, b"short").encode()


def test_error_frame_payload():
    f = error_frame(Reason.NOT_FOUND, "gone", 5)
    assert parse_error_payload(f) == (Reason.NOT_FOUND, "gone")
    assert parse_error_payload(Frame(MsgType.ERROR)) == (Reason.PROTOCOL_ERROR, "")


def test_malformed_verdicts():
    with pytest.raises(ProtocolError):
        parse_verdict_payload(Frame(MsgType.VERDICT, payloads=(b"\x02\x00",)))
    with pytest.raises(ProtocolError):
        parse_verdict_payload(Frame(MsgType.VERDICT, payloads=(b"\x01",)))


def test_stream_framing():
    import socket

    a, b = socket.socketpair()
    with a, b:
        f = Frame(MsgType.QUERY, 9, bytes(16), 2, (b"x" * 100000,))
        write_frame(a, f)
        assert read_frame(b) == f
        a.sendall(struct.pack("<I", 1 << 31))
        with pytest.raises(ProtocolError, match="limit"):
            read_frame(b)
        a.close()
        with pytest.raises(ConnectionError):
            read_frame(b)


# -- store ---------------------------------------------------------------------------


def test_store_roundtrip_and_overwrite(tmp_path, caplog):
    store = TpsStore(tmp_path)
    uid = bytes(range(16))
    assert store.get(uid) is None and uid not in store
    assert store.put(uid, b"demo", b"bio") is False
    assert store.get(uid) == (b"demo", b"bio")
    with caplog.at_level(logging.INFO, logger="ppid.audit"):
        assert store.put(uid, b"demo2", b"bio2") is True
    assert "re-enrollment" in caplog.text
    assert store.get(uid) == (b"demo2", b"bio2")
    assert len(store) == 1
    assert (tmp_path / f"{uid.hex()}.rec").exists()
    assert not list(tmp_path.glob(".tmp-*"))


def test_store_survives_reopen(tmp_path):
    TpsStore(tmp_path).put(bytes(16), b"a" * 1000, b"b")
    assert TpsStore(tmp_path).get(bytes(16)) == (b"a" * 1000, b"b")


def test_store_rejects_corruption(tmp_path):
    store = TpsStore(tmp_path)
    store.put(bytes(16), b"a", b"b")
    path = tmp_path / f"{bytes(16).hex()}.rec"
    path.write_bytes(path.read_bytes()[:-1])
    with pytest.raises(ValueError):
        store.get(bytes(16))


# -- parties -------------------------------------------------------------------------


@pytest.fixture
def pipe(reference, cfg, qcfg, tmp_path):
    be, keys = reference
    p = Pipeline(be, keys.secret_key, tmp_path / "store", cfg, qcfg)
    rec = random_record(np.random.default_rng(21))
    rec.dob = dt.date(1999, 6, 1)
    p.enroll(rec)
    return p, rec


def test_enroll_then_lookup(pipe):
    p, rec = pipe
    demo, bio = p.tps.store.get(rec.user_id)
    assert demo[:4] == bio[:4] == b"HEV1"


def test_enroll_rejects_pre_pivot_dob_before_encryption(pipe):
    p, rec = pipe
    rec2 = random_record(np.random.default_rng(22))
    rec2.dob = dt.date(1899, 12, 31)
    p.backend.counters.clear()
    with pytest.raises(EncodingError):
        enroll_frame(p.backend, rec2, p.cfg, p.qcfg)
    assert p.backend.counters["encrypt"] == 0


def test_duplicate_enrollment_overwrites(pipe, caplog):
    p, rec = pipe
    rec.pincode = "999999" if rec.pincode != "999999" else "111111"
    with caplog.at_level(logging.INFO, logger="ppid.audit"):
        p.enroll(rec)
    assert "re-enrollment" in caplog.text
    assert p.verdict(rec.user_id, QueryKind.PINCODE_MATCH, rec.pincode).status is Status.PASS


def test_query_payload_counts(pipe):
    p, rec = pipe
    assert len(p.sp.build_query(rec.user_id, QueryKind.BIOMETRIC_MATCH, rec.fingercode).payloads) == 1
    assert len(p.sp.build_query(rec.user_id, QueryKind.DOB_AFTER, dt.date(2017, 1, 1)).payloads) == 2


def test_query_ids_are_fresh(pipe):
    p, rec = pipe
    ids = {p.sp.build_query(rec.user_id, QueryKind.GENDER_MATCH, "F").query_id for _ in range(50)}
    assert len(ids) == 50


def test_sp_rejects_long_name_before_encryption(pipe):
    p, rec = pipe
    p.backend.counters.clear()
    with pytest.raises(EncodingError):
        p.sp.build_query(rec.user_id, QueryKind.NAME_MATCH, "x" * 51)
    assert p.backend.counters["encrypt"] == 0


def test_end_to_end_verdicts(pipe):
    p, rec = pipe
    assert p.verdict(rec.user_id, QueryKind.PINCODE_MATCH, rec.pincode).status is Status.PASS
    assert p.verdict(rec.user_id, QueryKind.DOB_AFTER, dt.date(2017, 1, 1)).status is Status.PASS
    assert p.verdict(rec.user_id, QueryKind.DOB_AFTER, dt.date(1998, 1, 1)).status is Status.FAIL
    assert p.verdict(rec.user_id, QueryKind.DOB_AFTER, DobQuery(dt.date(2017, 6, 1), 18)).status is Status.PASS
    assert p.verdict(rec.user_id, QueryKind.DOB_AFTER, DobQuery(dt.date(2017, 5, 31), 18)).status is Status.FAIL


def test_unknown_user_is_fail_not_found(pipe):
    p, _ = pipe
    v = p.verdict(b"\xff" * 16, QueryKind.GENDER_MATCH, "M")
    assert (v.status, v.reason) == (Status.FAIL, Reason.NOT_FOUND)


def test_arity_mismatch_is_protocol_error_without_evaluation(pipe):
    p, rec = pipe
    q = p.sp.build_query(rec.user_id, QueryKind.PINCODE_MATCH, rec.pincode)
    bad = Frame(MsgType.QUERY, q.query_id, q.user_id, QueryKind.DOB_AFTER, q.payloads)
    p.backend.counters.clear()
    with pytest.raises(ProtocolError, match="payload"):
        p.tps.handle_query(bad)
    assert p.backend.counters["mul"] == p.backend.counters["rotate"] == 0


def test_unknown_kind_is_protocol_error(pipe):
    p, rec = pipe
    with pytest.raises(ProtocolError, match="kind"):
        p.tps.handle_query(Frame(MsgType.QUERY, 1, rec.user_id, 99, ()))


def test_replayed_result_is_dropped(pipe, caplog):
    p, rec = pipe
    q = p.sp.build_query(rec.user_id, QueryKind.GENDER_MATCH, rec.gender)
    p.cs.expect(q.query_id, q.user_id, q.kind)
    result = p.tps.handle_query(q)
    assert p.cs.handle(result).status is Status.PASS
    with caplog.at_level(logging.WARNING, logger="ppid.audit"):
        assert p.cs.handle(result) is None
    assert "replayed" in caplog.text
    with caplog.at_level(logging.WARNING, logger="ppid.audit"):
        assert p.cs.handle(Frame(MsgType.TPS_RESULT, 12345, rec.user_id, 2, ())) is None
    assert "unknown" in caplog.text
    with pytest.raises(ProtocolError):
        p.cs.expect(q.query_id, q.user_id, q.kind)


def test_result_for_wrong_user_fails(pipe):
    p, rec = pipe
    q = p.sp.build_query(rec.user_id, QueryKind.GENDER_MATCH, rec.gender)
    p.cs.expect(q.query_id, b"\x01" * 16, q.kind)
    v = p.cs.handle(p.tps.handle_query(q))
    assert (v.status, v.reason) == (Status.FAIL, Reason.PROTOCOL_ERROR)


def test_cs_logs_no_slot_data(pipe, caplog):
    p, rec = pipe
    with caplog.at_level(logging.DEBUG):
        p.verdict(rec.user_id, QueryKind.NAME_MATCH, rec.name)
    for r in caplog.records:
        assert rec.name not in r.getMessage()


def test_cs_backup_flag(reference, cfg, qcfg, tmp_path):
    be, keys = reference
    backup = TpsStore(tmp_path / "backup")
    cs = CentralServer(be, keys.secret_key, cfg, qcfg, backup=backup)
    rec = random_record(np.random.default_rng(3))
    frame = cs.enroll_frame(rec)
    assert backup.get(rec.user_id) == frame.payloads


# -- roles and key files --------------------------------------------------------------


def test_role_capabilities():
    assert "decrypt" in roles.ROLE_CAPABILITIES["cs"]
    assert "decrypt" not in roles.ROLE_CAPABILITIES["tps"]
    assert "decrypt" not in roles.ROLE_CAPABILITIES["sp"]


@pytest.mark.parametrize("role", ["tps", "sp"])
def test_non_cs_roles_cannot_load_secret_key(reference, tmp_path, role):
    be, keys = reference
    save_keys(be, keys, tmp_path)
    roles.assume_role(role)
    with pytest.raises(CapabilityError):
        load_secret_key(be, tmp_path)
    with pytest.raises(CapabilityError):
        CentralServer(be, None, None, None)


def test_role_is_sticky():
    roles.assume_role("tps")
    roles.assume_role("tps")
    with pytest.raises(CapabilityError):
        roles.assume_role("cs")
    roles.reset_role()
    with pytest.raises(CapabilityError):
        roles.assume_role("nobody")


def test_tps_cannot_build_queries_or_enroll(reference, cfg, qcfg):
    be, _ = reference
    roles.assume_role("tps")
    with pytest.raises(CapabilityError):
        ServiceProvider(be, cfg, qcfg)
    with pytest.raises(CapabilityError):
        enroll_frame(be, random_record(np.random.default_rng(0)), cfg, qcfg)


def test_key_files(keyed, tmp_path):
    be, keys = keyed
    paths = save_keys(be, keys, tmp_path)
    magics = {k: p.read_bytes()[:4] for k, p in paths.items()}
    assert magics == {"public": b"HPK1", "relin": b"HRK1", "galois": b"HGK1", "secret": b"HSK1"}
    assert oct(paths["secret"].stat().st_mode & 0o777) == "0o600"
    fresh = make_backend(be.name, be.params)
    fresh.attach(load_keys(fresh, tmp_path))
    sk = load_secret_key(fresh, tmp_path)
    assert fresh.decrypt(fresh.encrypt([42]), sk)[0] == 42
    with pytest.raises(ValueError):
        load_keys(fresh, tmp_path, ("secret",))
    (tmp_path / KEY_FILES["relin"]).unlink()
    with pytest.raises(MissingKeyError):
        load_keys(fresh, tmp_path)


# -- sockets ---------------------------------------------------------------------------


@pytest.fixture
def services(reference, cfg, qcfg, tmp_path):
    be, keys = reference
    cs = CsService("127.0.0.1:0", CentralServer(be, keys.secret_key, cfg, qcfg), timeout=10).start()
    tps = TpsService("127.0.0.1:0", ThirdPartyServer(be, TpsStore(tmp_path / "store"), cfg), cs.address,
                     TranscriptRecorder(tmp_path / "transcript.jsonl"), timeout=10).start()
    yield be, cs, tps, tmp_path
    tps.shutdown()
    cs.shutdown()


def test_socket_round_trip(services, cfg, qcfg):
    be, cs, tps, tmp = services
    rec = random_record(np.random.default_rng(8))
    assert send_enrollments(tps.address, [enroll_frame(be, rec, cfg, qcfg)]) == 1
    sp = ServiceProvider(be, cfg, qcfg)
    for kind, value, expect in [
        (QueryKind.EMAIL_MATCH, rec.email, Status.PASS),
        (QueryKind.EMAIL_MATCH, rec.email + "x", Status.FAIL),
        (QueryKind.BIOMETRIC_MATCH, rec.fingercode, Status.PASS),
    ]:
        v = sp_query(sp.build_query(rec.user_id, kind, value), cs.address, tps.address, 10)
        assert v.status is expect
    v = sp_query(sp.build_query(b"\x07" * 16, QueryKind.GENDER_MATCH, "F"), cs.address, tps.address, 10)
    assert (v.status, v.reason) == (Status.FAIL, Reason.NOT_FOUND)
    entries = [json.loads(l) for l in (tmp / "transcript.jsonl").read_text().splitlines()]
    assert {e["msg_type"] for e in entries} <= {"ENROLL", "QUERY", "TPS_RESULT", "ERROR"}


def test_tps_rejects_verdict_frames(services):
    be, cs, tps, tmp = services
    from ppid.protocol.wire import connect

    with connect(tps.address, 5) as s:
        write_frame(s, Frame(MsgType.VERDICT, 1, bytes(16), 1, (b"\x01\x00",)))
        reply = read_frame(s)
    assert reply.msg_type is MsgType.ERROR
    assert parse_error_payload(reply)[0] is Reason.PROTOCOL_ERROR


def test_tps_rejects_malformed_query_over_socket(services, cfg, qcfg):
    be, cs, tps, tmp = services
    sp = ServiceProvider(be, cfg, qcfg)
    q = sp.build_query(bytes(16), QueryKind.NAME_MATCH, "a")
    bad = Frame(MsgType.QUERY, q.query_id, q.user_id, q.kind, q.payloads * 2)
    with pytest.raises(ProtocolError, match="payload"):
        sp_query(bad, cs.address, tps.address, 10)


def test_enrollment_of_garbage_is_rejected(services):
    be, cs, tps, tmp = services
    with pytest.raises(ProtocolError, match="rejected"):
        send_enrollments(tps.address, [Frame(MsgType.ENROLL, 0, bytes(16), 0, (b"HEV1junk", b"x"))])


def test_announce_frame_strips_payloads():
    q = Frame(MsgType.QUERY, 3, bytes(16), 1, (b"x",))
    assert announce_frame(q) == Frame(MsgType.QUERY, 3, bytes(16), 1, ())
