import pytest
from hypothesis import given, strategies as st

from ppid.params import (
    POLY_MODULUS_DEGREE,
    HeParams,
    SecurityLevel,
    batching_prime,
    is_prime,
    select_params,
)


def trial_division_prime(n):
    if n < 2:
        return False
    d = 2
    while d * d <= n:
        if n % d == 0:
            return False
        d += 1
    return True


def test_batching_prime_matches_trial_division_search():
    step = 2 * POLY_MODULUS_DEGREE
    candidates = [p for p in range(1, 1 << 22, step) if p > 1 << 21 and trial_division_prime(p)]
    assert batching_prime() == max(candidates) == 4079617


@given(st.integers(min_value=0, max_value=200_000))
def test_is_prime_agrees_with_trial_division(n):
    assert is_prime(n) == trial_division_prime(n)


def test_is_prime_rejects_strong_pseudoprimes():
    # Strong pseudoprimes to several small bases.
    for n in (2047, 1373653, 25326001, 3215031751, 3825123056546413051):
        assert not is_prime(n)


def test_select_params_defaults():
    p = select_params()
    assert p.security_level is SecurityLevel.BITS_192
    assert p.slot_count == 4096
    assert p.plain_modulus % (2 * p.poly_modulus_degree) == 1


def test_params_id_depends_on_every_field():
    ids = {select_params(s).params_id for s in (128, 192, 256)}
    assert len(ids) == 3


@pytest.mark.parametrize("t", [4079616, 4079619])
def test_composite_plain_modulus_rejected(t):
    with pytest.raises(ValueError, match="not prime"):
        HeParams(8192, t, SecurityLevel.BITS_128)


def test_prime_without_batching_rejected():
    assert trial_division_prime(4079573)
    with pytest.raises(ValueError, match="batching"):
        HeParams(8192, 4079573, SecurityLevel.BITS_128)


def test_unknown_security_level_rejected():
    with pytest.raises(ValueError):
        select_params(100)
