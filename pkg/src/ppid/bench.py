"""In-process, single-threaded timing of every query kind at TPS and the CS check.

Report schema (``schema`` = "ppid-bench/1")::

    backend, iterations, threads, security_requested, security_used,
    security_fallback (null or reason), coeff_modulus_bits,
    ciphertext_bytes: {demographic, biometric, per_user, result},
    kinds: {<kind>: {mean_ms, median_ms, depth, depth_without_transform,
                     rotations, additions, multiplications, plain_multiplications,
                     noise_budget_left, verdict, published}},
    cs_check: {mean_ms, median_ms, published_ms}
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from .backend import Backend, make_backend
from .encoding import (
    QuantizationConfig,
    encode_demographic,
    encode_dob_query,
    encode_field_query,
    encode_fingercode,
)
from .errors import ConfigurationError, DecryptionIntegrityError
from .params import SecurityLevel, select_params
from .queries import (
    QueryConfig,
    QueryKind,
    Status,
    check_slots,
    tps_biometric_match,
    tps_demographic_match,
    tps_dob_compare,
    tps_evaluate,
)
from .synthetic import random_record

log = logging.getLogger(__name__)

SCHEMA = "ppid-bench/1"
MIN_ITERATIONS = 100

# Published single-thread figures (ms, depth, rotations) for comparison.
PUBLISHED_TIMINGS = {
    QueryKind.NAME_MATCH: (22.82, 1, 1),
    QueryKind.GENDER_MATCH: (35.39, 1, 2),
    QueryKind.PINCODE_MATCH: (40.83, 1, 2),
    QueryKind.PHONE_MATCH: (35.36, 1, 2),
    QueryKind.EMAIL_MATCH: (35.17, 1, 2),
    QueryKind.DOB_AFTER: (217.73, 7, 3),
    QueryKind.BIOMETRIC_MATCH: (286.74, 3, 22),
}
PUBLISHED_CS_DECRYPT_MS = 4.66
PUBLISHED_VECTOR_BYTES = 432_000


@dataclass
class BenchSetup:
    backend: Backend
    secret_key: object
    cfg: QueryConfig
    qcfg: QuantizationConfig
    demographic: object
    biometric: object
    queries: dict = field(default_factory=dict)


def _queries(be: Backend, record, cfg: QueryConfig, qcfg: QuantizationConfig) -> dict:
    out = {}
    for kind in QueryKind:
        if kind.is_demographic:
            value = getattr(record, kind.field.value)
            out[kind] = [be.encrypt(encode_field_query(kind.field, value, cfg.layout))]
        elif kind is QueryKind.DOB_AFTER:
            y, d = encode_dob_query(record.dob + dt.timedelta(days=365))
            out[kind] = [be.encrypt(y), be.encrypt(d)]
        else:
            out[kind] = [be.encrypt(encode_fingercode(record.fingercode, qcfg))]
    return out


def setup(backend_name: str, security: int, beta: int, seed: int = 0) -> BenchSetup:
    params = select_params(security)
    be = make_backend(backend_name, params)
    keys = be.keygen()
    be.attach(keys)
    cfg = QueryConfig(beta=beta)
    qcfg = QuantizationConfig(params.plain_modulus, beta)
    record = random_record(np.random.default_rng(seed))
    demo = be.encrypt(encode_demographic(record, cfg.layout))
    bio = be.encrypt(encode_fingercode(record.fingercode, qcfg))
    s = BenchSetup(be, keys.secret_key, cfg, qcfg, demo, bio)
    s.queries = _queries(be, record, cfg, qcfg)
    return s


def _untransformed(s: BenchSetup, kind: QueryKind):
    be, q = s.backend, s.queries[kind]
    if kind.is_demographic:
        return tps_demographic_match(be, s.demographic, kind, q[0], s.cfg, transform=False)
    if kind is QueryKind.BIOMETRIC_MATCH:
        return tps_biometric_match(be, s.biometric, q[0], s.cfg, transform=False)
    return tps_dob_compare(be, s.demographic, q[0], q[1], s.cfg, transform=False)


def profile_kind(s: BenchSetup, kind: QueryKind) -> dict:
    """Operation counts, depth and remaining noise for one evaluation."""
    be = s.backend
    be.counters.clear()
    out = tps_evaluate(be, kind, s.demographic, s.biometric, s.queries[kind], s.cfg)
    counts = dict(be.counters)
    raw_depth = out.mult_depth
    bare_depth = _untransformed(s, kind).mult_depth
    noise = be.noise_budget(out, s.secret_key)
    try:
        verdict = check_slots(be.decrypt(out, s.secret_key), s.cfg).name
    except DecryptionIntegrityError:
        verdict = "NOISE_EXHAUSTED"
    return {
        "depth": raw_depth,
        "depth_without_transform": bare_depth,
        "rotations": counts.get("rotate", 0),
        "additions": sum(counts.get(k, 0) for k in ("add", "sub", "add_plain", "sub_plain")),
        "multiplications": counts.get("mul", 0),
        "plain_multiplications": counts.get("mul_plain", 0),
        "noise_budget_left": None if noise == float("inf") else int(noise),
        "verdict": verdict,
        "result_bytes": len(be.serialize(out)),
    }


def probe_security(backend_name: str, requested: int, beta: int) -> tuple[int, str | None]:
    """Highest level <= ``requested`` at which the deepest query still decrypts."""
    for level in sorted((l for l in SecurityLevel if l <= requested), reverse=True):
        try:
            s = setup(backend_name, int(level), beta)
            prof = profile_kind(s, QueryKind.DOB_AFTER)
        except ConfigurationError as exc:
            log.warning("security %d unavailable: %s", level, exc)
            continue
        if prof["verdict"] == Status.PASS.name:
            if level == requested:
                return int(level), None
            return int(level), (f"{requested}-bit parameters exhaust the noise budget of the "
                                f"depth-7 date query; fell back to {int(level)}-bit")
        log.warning("security %d: DoB query verdict %s", level, prof["verdict"])
    raise ConfigurationError("no security level supports the date-of-birth circuit")


def _timed(fn, iterations: int) -> list[float]:
    samples = []
    for _ in range(iterations):
        t0 = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - t0) * 1000.0)
    return samples


def run_bench(backend_name: str = "seal", iterations: int = MIN_ITERATIONS,
              security: int = 192, beta: int = 3000, seed: int = 0) -> dict:
    if iterations < MIN_ITERATIONS:
        raise ConfigurationError(f"bench needs at least {MIN_ITERATIONS} iterations")
    used, fallback = probe_security(backend_name, security, beta)
    s = setup(backend_name, used, beta, seed)
    be = s.backend

    sizes = {"demographic": len(be.serialize(s.demographic)),
             "biometric": len(be.serialize(s.biometric))}
    sizes["per_user"] = sizes["demographic"] + sizes["biometric"]

    kinds = {}
    results = {}
    for kind in QueryKind:
        entry = profile_kind(s, kind)
        samples = _timed(lambda: tps_evaluate(be, kind, s.demographic, s.biometric,
                                              s.queries[kind], s.cfg), iterations)
        published_ms, published_depth, published_rot = PUBLISHED_TIMINGS[kind]
        entry.update(mean_ms=statistics.fmean(samples), median_ms=statistics.median(samples),
                     published={"ms": published_ms, "depth": published_depth, "rotations": published_rot})
        kinds[kind.name] = entry
        results[kind] = tps_evaluate(be, kind, s.demographic, s.biometric, s.queries[kind], s.cfg)
    sizes["result"] = kinds[QueryKind.PINCODE_MATCH.name]["result_bytes"]

    cs_samples = []
    for i in range(iterations):
        out = results[list(QueryKind)[i % len(QueryKind)]]
        t0 = time.perf_counter()
        check_slots(be.decrypt(out, s.secret_key), s.cfg)
        cs_samples.append((time.perf_counter() - t0) * 1000.0)

    coeff_bits = None
    if backend_name == "seal":
        from .backend.seal import coeff_modulus_bits
        coeff_bits = coeff_modulus_bits(be.params)

    return {
        "schema": SCHEMA,
        "backend": backend_name,
        "iterations": iterations,
        "threads": 1,
        "beta": beta,
        "security_requested": security,
        "security_used": used,
        "security_fallback": fallback,
        "coeff_modulus_bits": coeff_bits,
        "ciphertext_bytes": sizes,
        "published_vector_bytes": PUBLISHED_VECTOR_BYTES,
        "kinds": kinds,
        "cs_check": {"mean_ms": statistics.fmean(cs_samples),
                     "median_ms": statistics.median(cs_samples),
                     "published_ms": PUBLISHED_CS_DECRYPT_MS},
    }


def format_report(report: dict) -> str:
    lines = [
        f"backend={report['backend']} security={report['security_used']}-bit "
        f"(requested {report['security_requested']}) beta={report['beta']} "
        f"iterations={report['iterations']} threads={report['threads']}",
    ]
    if report["security_fallback"]:
        lines.append(f"fallback: {report['security_fallback']}")
    sz = report["ciphertext_bytes"]
    lines.append(f"ciphertext bytes: demographic={sz['demographic']} biometric={sz['biometric']} "
                 f"per_user={sz['per_user']} (published {report['published_vector_bytes']} per vector)")
    lines.append("")
    header = (f"{'query':<16} {'mean ms':>9} {'median':>9} {'published':>9} {'depth':>5} "
              f"{'bare':>4} {'rot':>4} {'add':>4} {'mul':>4} {'pmul':>4} {'noise':>5}  verdict")
    lines += [header, "-" * len(header)]
    for name, k in report["kinds"].items():
        noise = "-" if k["noise_budget_left"] is None else str(k["noise_budget_left"])
        lines.append(
            f"{name:<16} {k['mean_ms']:>9.2f} {k['median_ms']:>9.2f} {k['published']['ms']:>9.2f} "
            f"{k['depth']:>5} {k['depth_without_transform']:>4} {k['rotations']:>4} "
            f"{k['additions']:>4} {k['multiplications']:>4} {k['plain_multiplications']:>4} "
            f"{noise:>5}  {k['verdict']}")
    cs = report["cs_check"]
    lines.append(f"{'CS_CHECK':<16} {cs['mean_ms']:>9.2f} {cs['median_ms']:>9.2f} {cs['published_ms']:>9.2f}")
    return "\n".join(lines)


def dump_json(report: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
