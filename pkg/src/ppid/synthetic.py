"""Random but valid user records, for benchmarks and tests."""

from __future__ import annotations

import datetime as dt
import string

import numpy as np

from .encoding import FINGERCODE_LEN, MAX_DATE, MIN_DATE, UserRecord

_ALPHA = string.ascii_letters
_NAME_CHARS = string.ascii_letters + " .'-"


def _word(rng: np.random.Generator, alphabet: str, lo: int, hi: int) -> str:
    n = int(rng.integers(lo, hi + 1))
    return "".join(alphabet[i] for i in rng.integers(0, len(alphabet), n))


def random_date(rng: np.random.Generator, lo: dt.date = MIN_DATE, hi: dt.date = MAX_DATE) -> dt.date:
    return lo + dt.timedelta(days=int(rng.integers(0, (hi - lo).days + 1)))


def random_fingercode(rng: np.random.Generator) -> list[float]:
    return [float(v) for v in rng.uniform(0.0, 255.0, FINGERCODE_LEN).round(3)]


def random_record(rng: np.random.Generator) -> UserRecord:
    return UserRecord(
        user_id=rng.bytes(16),
        name=_word(rng, _ALPHA, 1, 1) + _word(rng, _NAME_CHARS, 0, 48),
        gender=str(rng.choice(["M", "F", "X"])),
        pincode="".join(str(d) for d in rng.integers(0, 10, 6)),
        phone="+" + "".join(str(d) for d in rng.integers(0, 10, int(rng.integers(7, 13)))),
        email=_word(rng, _ALPHA, 1, 12) + "@" + _word(rng, _ALPHA, 1, 8) + ".org",
        dob=random_date(rng, dt.date(1920, 1, 1), dt.date(2020, 12, 31)),
        fingercode=tuple(random_fingercode(rng)),
    )
