"""Query evaluators run at TPS and the query-agnostic check run at CS.

Every evaluator ends with a transform that puts its result in one common
shape, so CS decides every query with the same predicate: slots [0, 400) are
all zero and slots [400, 400 + beta] contain at least one zero.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property

import numpy as np

from .backend import Backend, HomomorphicVector
from .encoding import (
    FINGERCODE_LEN,
    LAYOUT,
    YEAR_SLOTS,
    DemographicField,
    FieldLayout,
    QuantizationConfig,
    UserRecord,
    quantize_fingercode,
)
from .errors import ConfigurationError
from .gates import gate_and, gate_not, gate_xor
from .params import SLOT_COUNT

PREFIX = 400
DEFAULT_BETA = 3000


class QueryKind(IntEnum):
    NAME_MATCH = 1
    GENDER_MATCH = 2
    PINCODE_MATCH = 3
    PHONE_MATCH = 4
    EMAIL_MATCH = 5
    DOB_AFTER = 6
    BIOMETRIC_MATCH = 7

    @property
    def field(self) -> DemographicField | None:
        return _DEMOGRAPHIC.get(self)

    @property
    def is_demographic(self) -> bool:
        return self in _DEMOGRAPHIC

    @property
    def arity(self) -> int:
        return 2 if self is QueryKind.DOB_AFTER else 1


_DEMOGRAPHIC = {
    QueryKind.NAME_MATCH: DemographicField.NAME,
    QueryKind.GENDER_MATCH: DemographicField.GENDER,
    QueryKind.PINCODE_MATCH: DemographicField.PINCODE,
    QueryKind.PHONE_MATCH: DemographicField.PHONE,
    QueryKind.EMAIL_MATCH: DemographicField.EMAIL,
}


class Status(IntEnum):
    FAIL = 0
    PASS = 1


@dataclass(frozen=True)
class DobQuery:
    date: dt.date
    years_offset: int = 0


@dataclass(frozen=True)
class QueryConfig:
    beta: int = DEFAULT_BETA
    layout: FieldLayout = field(default=LAYOUT)

    def __post_init__(self) -> None:
        if self.beta <= 0:
            raise ConfigurationError("beta must be positive")
        if PREFIX + self.beta >= SLOT_COUNT:
            raise ConfigurationError(f"400 + beta must stay below {SLOT_COUNT}")

    @property
    def witness(self) -> slice:
        """Slots [400, 400 + beta], inclusive."""
        return slice(PREFIX, PREFIX + self.beta + 1)

    def _range_mask(self, start: int, stop: int) -> np.ndarray:
        m = np.zeros(SLOT_COUNT, dtype=np.int64)
        m[start:stop] = 1
        return m

    @cached_property
    def prefix_mask(self) -> np.ndarray:
        return self._range_mask(0, PREFIX)

    @cached_property
    def slot0_mask(self) -> np.ndarray:
        return self._range_mask(0, 1)

    @cached_property
    def ramp_mask(self) -> np.ndarray:
        return self._range_mask(0, self.beta + 1)

    @cached_property
    def ramp(self) -> np.ndarray:
        r = np.zeros(SLOT_COUNT, dtype=np.int64)
        r[: self.beta + 1] = np.arange(self.beta + 1)
        return r

    @cached_property
    def threshold(self) -> np.ndarray:
        return self.ramp_mask * self.beta

    @cached_property
    def date_filler(self) -> np.ndarray:
        # Ones on [800, 400 + beta] so only the day window can supply a zero.
        return self._range_mask(2 * PREFIX, PREFIX + self.beta + 1)

    def field_mask(self, name) -> np.ndarray:
        rng = self.layout[name]
        return self._range_mask(rng.start, rng.stop)


# -- TPS side ------------------------------------------------------------------


def agnostic_transform(be: Backend, kind: QueryKind, v: HomomorphicVector,
                       cfg: QueryConfig) -> HomomorphicVector:
    if kind.is_demographic:
        return be.mul_plain(v, cfg.prefix_mask)
    if kind is QueryKind.BIOMETRIC_MATCH:
        return be.rotate_right(v, PREFIX)
    return be.add_plain(v, cfg.date_filler)


def tps_demographic_match(be: Backend, demo_enc: HomomorphicVector, kind: QueryKind,
                          u_enc: HomomorphicVector, cfg: QueryConfig,
                          transform: bool = True) -> HomomorphicVector:
    name = kind.field
    if name is None:
        raise ValueError(f"{kind.name} is not a demographic query")
    v = be.mul_plain(demo_enc, cfg.field_mask(name))
    v = be.rotate_left(v, cfg.layout[name].start)
    out = be.sub(v, u_enc)
    return agnostic_transform(be, kind, out, cfg) if transform else out


def tps_euclidean_distance(be: Backend, u_enc: HomomorphicVector,
                           bio_enc: HomomorphicVector, cfg: QueryConfig) -> HomomorphicVector:
    """Encrypted <ED, 0, ..., 0> with ED the squared distance over the first 640 slots."""
    e = be.sub(u_enc, bio_enc)
    e = be.mul(e, e)
    step = 1
    while step < FINGERCODE_LEN:
        e = be.add(e, be.rotate_left(e, step))
        step *= 2
    return be.mul_plain(e, cfg.slot0_mask)


def tps_threshold_compare(be: Backend, e_enc: HomomorphicVector, cfg: QueryConfig,
                          transform: bool = True) -> HomomorphicVector:
    # Doubling fills the whole row with ED; the mask keeps beta + 1 copies.
    step = 1
    while step < SLOT_COUNT:
        e_enc = be.add(e_enc, be.rotate_right(e_enc, step))
        step *= 2
    e_enc = be.mul_plain(e_enc, cfg.ramp_mask)
    e_enc = be.add_plain(e_enc, cfg.ramp)
    out = be.sub_plain(e_enc, cfg.threshold)
    return agnostic_transform(be, QueryKind.BIOMETRIC_MATCH, out, cfg) if transform else out


def tps_biometric_match(be: Backend, bio_enc: HomomorphicVector, u_enc: HomomorphicVector,
                        cfg: QueryConfig, transform: bool = True) -> HomomorphicVector:
    return tps_threshold_compare(be, tps_euclidean_distance(be, u_enc, bio_enc, cfg), cfg,
                                 transform=transform)


def shift_years(be: Backend, y_enc: HomomorphicVector, years: int,
                cfg: QueryConfig) -> HomomorphicVector:
    """Add ``years`` to an isolated unary year vector (zero outside [0, 400)).

    The stored year plus ``years`` must stay below 400; larger sums spill
    past the year window.
    """
    if not 0 <= years < YEAR_SLOTS:
        raise ValueError("year shift out of range")
    head = np.zeros(SLOT_COUNT, dtype=np.int64)
    head[:years] = 1
    return be.add_plain(be.rotate_right(y_enc, years), head)


def tps_dob_compare(be: Backend, demo_enc: HomomorphicVector, y_query: HomomorphicVector,
                    d_query: HomomorphicVector, cfg: QueryConfig,
                    transform: bool = True, year_shift: int = 0) -> HomomorphicVector:
    year_start = cfg.layout.dob_year.start
    day_start = cfg.layout.dob_day.start
    year_row = be.rotate_left(demo_enc, year_start)
    y = be.mul_plain(year_row, cfg.prefix_mask)
    d = be.mul_plain(be.rotate_left(demo_enc, day_start), cfg.prefix_mask)
    if year_shift:
        y = year_row = shift_years(be, y, year_shift, cfg)

    # year_row is unmasked; slots past 400 hold other fields. Both uses of
    # the XOR below are ANDed with a vector that is zero there (y, y_query).
    x = gate_xor(be, year_row, y_query)
    temp1 = gate_and(be, y, x)
    temp2 = be.mul(be.sub(d_query, d), gate_not(be, gate_and(be, x, y_query)))
    out = be.add(temp1, be.rotate_right(temp2, PREFIX))
    return agnostic_transform(be, QueryKind.DOB_AFTER, out, cfg) if transform else out


def tps_evaluate(be: Backend, kind: QueryKind, demo_enc: HomomorphicVector,
                 bio_enc: HomomorphicVector, payloads: list[HomomorphicVector],
                 cfg: QueryConfig) -> HomomorphicVector:
    if len(payloads) != kind.arity:
        raise ValueError(f"{kind.name} takes {kind.arity} payload(s), got {len(payloads)}")
    if kind.is_demographic:
        return tps_demographic_match(be, demo_enc, kind, payloads[0], cfg)
    if kind is QueryKind.BIOMETRIC_MATCH:
        return tps_biometric_match(be, bio_enc, payloads[0], cfg)
    return tps_dob_compare(be, demo_enc, payloads[0], payloads[1], cfg)


# -- CS side --------------------------------------------------------------------


def check_slots(slots: np.ndarray, cfg: QueryConfig) -> Status:
    prefix_clear = not np.any(slots[:PREFIX])
    witness_found = bool(np.any(slots[cfg.witness] == 0))
    return Status(prefix_clear and witness_found)


def cs_extended_decrypt(be: Backend, out_enc: HomomorphicVector, secret_key,
                        cfg: QueryConfig) -> Status:
    return check_slots(be.decrypt(out_enc, secret_key), cfg)


# -- plaintext oracle -------------------------------------------------------------


def plaintext_oracle(kind: QueryKind, record: UserRecord, payload, cfg: QueryConfig,
                     qcfg: QuantizationConfig) -> Status:
    """Verdict computed directly on plaintext, without any slot vectors."""
    if kind.is_demographic:
        return Status(getattr(record, kind.field.value) == payload)
    if kind is QueryKind.DOB_AFTER:
        q = payload if isinstance(payload, DobQuery) else DobQuery(payload)
        if q.years_offset == 0:
            return Status(record.dob <= q.date)
        born = (record.dob.year + q.years_offset, record.dob.timetuple().tm_yday)
        return Status(born <= (q.date.year, q.date.timetuple().tm_yday))
    stored = [int(v) for v in quantize_fingercode(record.fingercode, qcfg)]
    probe = [int(v) for v in quantize_fingercode(payload, qcfg)]
    distance = sum((a - b) ** 2 for a, b in zip(stored, probe))
    return Status(distance <= cfg.beta)
