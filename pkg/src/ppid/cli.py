"""Operator command line: ``ppid <command> [options]``.

Exit codes: 0 PASS / success, 1 FAIL, 2 usage or other error, 3 configuration,
4 file or key error, 5 transport (peer unreachable), 6 protocol error.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import signal
import sys
from pathlib import Path

from .backend import make_backend
from .config import Config, load_config
from .encoding import UserRecord
from .errors import (
    CapabilityError,
    ConfigurationError,
    DecodeError,
    EncodingError,
    MissingKeyError,
    PpidError,
    ProtocolError,
    TransportError,
)
from .protocol import roles
from .protocol.keys import load_keys, load_secret_key, save_keys
from .protocol.net import CsService, TpsService, TranscriptRecorder, send_enrollments, sp_query
from .protocol.parties import CentralServer, ServiceProvider, ThirdPartyServer, enroll_frame
from .protocol.store import TpsStore
from .queries import DobQuery, QueryKind, Status

log = logging.getLogger("ppid")

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_ERROR = 2
EXIT_CONFIG = 3
EXIT_FILE = 4
EXIT_TRANSPORT = 5
EXIT_PROTOCOL = 6

KIND_NAMES = {
    "name": QueryKind.NAME_MATCH,
    "gender": QueryKind.GENDER_MATCH,
    "pincode": QueryKind.PINCODE_MATCH,
    "phone": QueryKind.PHONE_MATCH,
    "email": QueryKind.EMAIL_MATCH,
    "dob-after": QueryKind.DOB_AFTER,
    "biometric": QueryKind.BIOMETRIC_MATCH,
}


def _backend(cfg: Config, kinds=("public", "relin", "galois")):
    be = make_backend(cfg.backend, cfg.he_params())
    be.attach(load_keys(be, cfg.key_dir, kinds))
    return be


def cmd_keygen(cfg: Config, args) -> int:
    roles.assume_role("cs")
    be = make_backend(cfg.backend, cfg.he_params())
    keys = be.keygen()
    for kind, path in save_keys(be, keys, cfg.key_dir).items():
        print(f"{kind:<7} {path}")
    return EXIT_PASS


def _read_records(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            lines = [ln for ln in fh if ln.strip()]
    except OSError as exc:
        raise FileNotFoundError(f"cannot read records file: {exc}") from exc
    return [UserRecord.from_json(ln) for ln in lines]


def cmd_enroll(cfg: Config, args) -> int:
    roles.assume_role("cs")
    records = _read_records(args.records)
    be = _backend(cfg, ("public",))
    frames = [enroll_frame(be, r, cfg.query_config(), cfg.quantization()) for r in records]
    if cfg.cs_backup:
        backup = TpsStore(cfg.cs_backup_path)
        for f in frames:
            backup.put(f.user_id, *f.payloads)
    n = send_enrollments(cfg.tps_address, frames, cfg.timeout)
    print(f"enrolled {n} record(s) at {cfg.tps_address}")
    return EXIT_PASS


def _serve(service, name: str) -> int:
    def stop(signum, frame):
        raise KeyboardInterrupt

    signal.signal(signal.SIGTERM, stop)
    caps = ",".join(sorted(roles.ROLE_CAPABILITIES[roles.current_role()]))
    print(f"{name} listening on {service.address} capabilities={caps}", flush=True)
    try:
        service.serve_forever()
    except KeyboardInterrupt:
        pass
    return EXIT_PASS


def cmd_serve_tps(cfg: Config, args) -> int:
    roles.assume_role("tps")
    be = _backend(cfg)
    tps = ThirdPartyServer(be, TpsStore(cfg.store_path), cfg.query_config())
    transcript = TranscriptRecorder(cfg.transcript_path) if cfg.transcript_path else None
    service = TpsService(cfg.tps_address, tps, cfg.cs_address, transcript, cfg.timeout)
    return _serve(service, "TPS")


def cmd_serve_cs(cfg: Config, args) -> int:
    roles.assume_role("cs")
    be = _backend(cfg, ("public",))
    sk = load_secret_key(be, cfg.key_dir)
    backup = TpsStore(cfg.cs_backup_path) if cfg.cs_backup else None
    cs = CentralServer(be, sk, cfg.query_config(), cfg.quantization(), backup)
    service = CsService(cfg.cs_address, cs, cfg.timeout)
    return _serve(service, "CS")


def _query_value(kind: QueryKind, args):
    if kind is QueryKind.DOB_AFTER:
        try:
            date = dt.date.fromisoformat(args.value)
        except ValueError as exc:
            raise EncodingError(f"bad date {args.value!r}: {exc}") from exc
        return DobQuery(date, args.years_offset)
    if kind is QueryKind.BIOMETRIC_MATCH:
        try:
            return json.loads(Path(args.value).read_text(encoding="utf-8"))
        except OSError as exc:
            raise FileNotFoundError(f"cannot read template: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise EncodingError(f"template is not JSON: {exc}") from exc
    return args.value


def cmd_query(cfg: Config, args) -> int:
    roles.assume_role("sp")
    kind = KIND_NAMES[args.kind]
    try:
        user_id = bytes.fromhex(args.user_id)
    except ValueError:
        raise EncodingError("user id must be hex") from None
    if len(user_id) != 16:
        raise EncodingError("user id must be 16 bytes (32 hex digits)")
    be = _backend(cfg, ("public",))
    sp = ServiceProvider(be, cfg.query_config(), cfg.quantization())
    query = sp.build_query(user_id, kind, _query_value(kind, args))
    verdict = sp_query(query, cfg.cs_address, cfg.tps_address, cfg.timeout)
    suffix = "" if verdict.reason.name == "OK" else f" ({verdict.reason.name})"
    print(f"{verdict.status.name}{suffix}")
    return EXIT_PASS if verdict.status is Status.PASS else EXIT_FAIL


def cmd_bench(cfg: Config, args) -> int:
    from .bench import dump_json, format_report, run_bench

    report = run_bench(cfg.backend, args.iterations, args.security or 192, cfg.beta, args.seed)
    print(format_report(report))
    if args.json:
        dump_json(report, args.json)
    return EXIT_PASS


def cmd_capabilities(cfg: Config, args) -> int:
    caps = roles.assume_role(args.role)
    print(json.dumps({"role": args.role, "capabilities": sorted(caps)}))
    return EXIT_PASS


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ppid", description="Encrypted identity verification.")
    p.add_argument("--config", help="config file (default: $PPID_CONFIG)")
    p.add_argument("--backend", choices=["seal", "reference"])
    p.add_argument("--security", type=int, choices=[128, 192, 256])
    p.add_argument("--beta", type=int)
    p.add_argument("--tps-address")
    p.add_argument("--cs-address")
    p.add_argument("--store-path")
    p.add_argument("--key-dir")
    p.add_argument("--transcript-path")
    p.add_argument("--cs-backup", action="store_const", const=True)
    p.add_argument("--timeout", type=float)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("keygen", help="generate key files (CS)").set_defaults(func=cmd_keygen)

    e = sub.add_parser("enroll", help="encrypt records and send them to TPS (CS)")
    e.add_argument("records", help="JSON-lines file of user records")
    e.set_defaults(func=cmd_enroll)

    sub.add_parser("serve-tps", help="run the TPS service").set_defaults(func=cmd_serve_tps)
    sub.add_parser("serve-cs", help="run the CS service").set_defaults(func=cmd_serve_cs)

    q = sub.add_parser("query", help="issue one query (SP)")
    q.add_argument("kind", choices=sorted(KIND_NAMES))
    q.add_argument("value", help="field value, ISO date, or template JSON file for biometric")
    q.add_argument("--user-id", required=True, help="32 hex digits")
    q.add_argument("--years-offset", type=int, default=0,
                   help="dob-after: require the user be this many years old on the date")
    q.set_defaults(func=cmd_query)

    b = sub.add_parser("bench", help="time every query kind in-process")
    b.add_argument("--iterations", type=int, default=100)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--json", help="also write the report as JSON here")
    b.set_defaults(func=cmd_bench)

    c = sub.add_parser("capabilities", help="print the capabilities of a role")
    c.add_argument("--role", required=True, choices=sorted(roles.ROLE_CAPABILITIES))
    c.set_defaults(func=cmd_capabilities)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = load_config(args.config).override(
            backend=args.backend, security=args.security, beta=args.beta,
            tps_address=args.tps_address, cs_address=args.cs_address,
            store_path=args.store_path, key_dir=args.key_dir,
            transcript_path=args.transcript_path, cs_backup=args.cs_backup,
            timeout=args.timeout)
        return args.func(cfg, args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, MissingKeyError, DecodeError) as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return EXIT_FILE
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except (ProtocolError, ConnectionError) as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (CapabilityError, EncodingError, PpidError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
