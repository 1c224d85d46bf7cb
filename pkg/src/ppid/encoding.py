"""Slot layouts and encodings for demographic and biometric user data.

Demographic vector (one bit per slot for text fields):

    name     [0, 400)      gender  [400, 408)    pincode  [408, 456)
    phone    [456, 560)    email   [560, 800)
    dob year [800, 1200)   unary: slot 800+i is 1 iff i < years since 1900
    dob day  [1200, 1600)  ramp d, d+1, ..., d+399 (d = day of year, Jan 1 -> 1)

Biometric vector: quantized fingercode in [0, 640).
"""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DecodeError, EncodingError
from .params import SLOT_COUNT

PIVOT_YEAR = 1900
YEAR_SLOTS = 400
FINGERCODE_LEN = 640
BITS_PER_CHAR = 8
MIN_DATE = dt.date(PIVOT_YEAR, 1, 1)
MAX_DATE = dt.date(PIVOT_YEAR + YEAR_SLOTS - 1, 12, 31)


@dataclass(frozen=True)
class SlotRange:
    start: int
    width: int

    @property
    def stop(self) -> int:
        return self.start + self.width

    @property
    def slice(self) -> slice:
        return slice(self.start, self.stop)


class DemographicField(str, Enum):
    NAME = "name"
    GENDER = "gender"
    PINCODE = "pincode"
    PHONE = "phone"
    EMAIL = "email"


@dataclass(frozen=True)
class FieldLayout:
    fields: dict = field(default_factory=lambda: {
        DemographicField.NAME: SlotRange(0, 400),
        DemographicField.GENDER: SlotRange(400, 8),
        DemographicField.PINCODE: SlotRange(408, 48),
        DemographicField.PHONE: SlotRange(456, 104),
        DemographicField.EMAIL: SlotRange(560, 240),
    })
    dob_year: SlotRange = SlotRange(800, YEAR_SLOTS)
    dob_day: SlotRange = SlotRange(1200, YEAR_SLOTS)
    fingercode: SlotRange = SlotRange(0, FINGERCODE_LEN)

    def __getitem__(self, name) -> SlotRange:
        return self.fields[DemographicField(name)]

    def max_chars(self, name) -> int:
        return self[name].width // BITS_PER_CHAR


LAYOUT = FieldLayout()


@dataclass(frozen=True)
class DateEncoding:
    years: int
    day: int

    @classmethod
    def from_date(cls, date: dt.date) -> "DateEncoding":
        if not MIN_DATE <= date <= MAX_DATE:
            raise EncodingError(f"date {date} outside [{MIN_DATE}, {MAX_DATE}]")
        return cls(date.year - PIVOT_YEAR, date.timetuple().tm_yday)

    def to_date(self) -> dt.date:
        return dt.date(PIVOT_YEAR + self.years, 1, 1) + dt.timedelta(days=self.day - 1)


@dataclass(frozen=True)
class QuantizationConfig:
    """Maps raw fingercode values in ``[0, raw_max]`` to integers in ``[0, q_max]``.

    ``q_max`` is the largest value for which the squared distance of two
    templates plus the threshold still fits below the plaintext modulus.
    """

    plain_modulus: int
    beta: int
    raw_max: float = 255.0

    @property
    def q_max(self) -> int:
        return math.isqrt((self.plain_modulus - self.beta - 1) // FINGERCODE_LEN)

    def __post_init__(self) -> None:
        if FINGERCODE_LEN * self.q_max ** 2 + self.beta >= self.plain_modulus:
            raise ValueError("quantization bound violated")
        if self.q_max < 1:
            raise ValueError("plain modulus too small for fingercode distances")


@dataclass
class UserRecord:
    user_id: bytes
    name: str
    gender: str
    pincode: str
    phone: str
    email: str
    dob: dt.date
    fingercode: tuple = ()

    @classmethod
    def from_json(cls, obj: dict | str) -> "UserRecord":
        if isinstance(obj, str):
            obj = json.loads(obj)
        try:
            user_id = bytes.fromhex(obj["user_id"])
            return cls(
                user_id=user_id,
                name=obj["name"],
                gender=obj["gender"],
                pincode=obj["pincode"],
                phone=obj["phone"],
                email=obj["email"],
                dob=dt.date.fromisoformat(obj["dob"]),
                fingercode=tuple(obj["fingercode"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise EncodingError(f"malformed enrollment record: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps({
            "user_id": self.user_id.hex(),
            "name": self.name,
            "gender": self.gender,
            "pincode": self.pincode,
            "phone": self.phone,
            "email": self.email,
            "dob": self.dob.isoformat(),
            "fingercode": list(self.fingercode),
        })


@dataclass(frozen=True)
class DemographicFields:
    name: str
    gender: str
    pincode: str
    phone: str
    email: str
    dob: dt.date


def text_bits(value: str, width: int) -> np.ndarray:
    """ASCII bits of ``value``, MSB first, zero-padded to ``width`` slots."""
    if not isinstance(value, str):
        raise EncodingError(f"expected a string, got {type(value).__name__}")
    try:
        raw = value.encode("ascii")
    except UnicodeEncodeError as exc:
        raise EncodingError(f"non-ASCII character in {value!r}") from exc
    if b"\x00" in raw:
        raise EncodingError("NUL characters are reserved for padding")
    if len(raw) * BITS_PER_CHAR > width:
        raise EncodingError(f"{value!r} needs {len(raw) * BITS_PER_CHAR} slots, field has {width}")
    out = np.zeros(width, dtype=np.int64)
    if raw:
        bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8))
        out[: bits.size] = bits
    return out


def bits_text(bits: np.ndarray) -> str:
    if np.any((bits != 0) & (bits != 1)):
        raise DecodeError("text region holds non-binary slots")
    raw = np.packbits(bits.astype(np.uint8)).tobytes().rstrip(b"\x00")
    if b"\x00" in raw or any(b > 0x7F for b in raw):
        raise DecodeError("text region is not padded ASCII")
    return raw.decode("ascii")


def validate_record(record: UserRecord) -> None:
    if len(record.user_id) != 16:
        raise EncodingError("user_id must be 16 bytes")
    if len(record.gender) != 1:
        raise EncodingError("gender must be a single character")
    if len(record.pincode) != 6 or not record.pincode.isdigit():
        raise EncodingError(f"pincode must be 6 digits, got {record.pincode!r}")
    for name in DemographicField:
        text_bits(getattr(record, name.value), LAYOUT[name].width)
    DateEncoding.from_date(record.dob)


def encode_demographic(record: UserRecord, layout: FieldLayout = LAYOUT) -> np.ndarray:
    validate_record(record)
    out = np.zeros(SLOT_COUNT, dtype=np.int64)
    for name, rng in layout.fields.items():
        out[rng.slice] = text_bits(getattr(record, name.value), rng.width)
    date = DateEncoding.from_date(record.dob)
    out[layout.dob_year.start: layout.dob_year.start + date.years] = 1
    out[layout.dob_day.slice] = date.day + np.arange(layout.dob_day.width)
    return out


def decode_demographic(slots: np.ndarray, layout: FieldLayout = LAYOUT) -> DemographicFields:
    slots = np.asarray(slots, dtype=np.int64)
    text = {name.value: bits_text(slots[rng.slice]) for name, rng in layout.fields.items()}

    unary = slots[layout.dob_year.slice]
    years = int(np.count_nonzero(unary))
    if np.any((unary != 0) & (unary != 1)) or np.any(unary[:years] != 1):
        raise DecodeError("year region is not a unary prefix")
    ramp = slots[layout.dob_day.slice]
    day = int(ramp[0])
    if not 1 <= day <= 366 or np.any(ramp != day + np.arange(ramp.size)):
        raise DecodeError("day region is not a day-of-year ramp")
    try:
        dob = DateEncoding(years, day).to_date()
    except (OverflowError, ValueError) as exc:
        raise DecodeError(str(exc)) from exc
    if dob.year != PIVOT_YEAR + years:
        raise DecodeError(f"day {day} does not exist in year {PIVOT_YEAR + years}")
    return DemographicFields(dob=dob, **text)


def encode_field_query(name, value: str, layout: FieldLayout = LAYOUT) -> np.ndarray:
    """Start-aligned encoding of one demographic field, as the SP sends it."""
    try:
        rng = layout[name]
    except ValueError as exc:
        raise EncodingError(f"unknown demographic field {name!r}") from exc
    out = np.zeros(SLOT_COUNT, dtype=np.int64)
    out[: rng.width] = text_bits(value, rng.width)
    return out


def encode_dob_query(date: dt.date, years_offset: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Unary year and constant day vectors for comparing a stored DoB against ``date``.

    ``years_offset`` shifts the year component only, so "at least 18 years old
    on ``date``" is ``years_offset=18``; this equals adding 18 to the stored year.
    """
    enc = DateEncoding.from_date(date)
    years = enc.years - years_offset
    if not 0 <= years < YEAR_SLOTS:
        raise EncodingError(f"offset date lies outside the representable year range")
    y = np.zeros(SLOT_COUNT, dtype=np.int64)
    y[:years] = 1
    d = np.zeros(SLOT_COUNT, dtype=np.int64)
    d[:YEAR_SLOTS] = enc.day
    return y, d


def quantize_fingercode(raw, qcfg: QuantizationConfig) -> np.ndarray:
    arr = np.asarray(raw, dtype=np.float64)
    if arr.shape != (FINGERCODE_LEN,):
        raise EncodingError(f"fingercode must have {FINGERCODE_LEN} elements, got {arr.shape}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0 or arr.max() > qcfg.raw_max:
        raise EncodingError(f"fingercode values must lie in [0, {qcfg.raw_max}]")
    return np.floor(arr * qcfg.q_max / qcfg.raw_max + 0.5).astype(np.int64)


def encode_fingercode(raw, qcfg: QuantizationConfig) -> np.ndarray:
    out = np.zeros(SLOT_COUNT, dtype=np.int64)
    out[:FINGERCODE_LEN] = quantize_fingercode(raw, qcfg)
    return out


def dequantize(q, qcfg: QuantizationConfig) -> np.ndarray:
    """Raw values that quantize exactly back to ``q``."""
    return np.asarray(q, dtype=np.float64) * qcfg.raw_max / qcfg.q_max
