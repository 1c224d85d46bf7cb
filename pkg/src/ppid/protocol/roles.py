"""Per-process role and the operations each role may perform.

A process assumes one role at startup. Library code that touches the secret
key calls :func:`require`, so a TPS or SP process fails closed instead of
loading key material it must never hold.
"""

from __future__ import annotations

import threading

from ..errors import CapabilityError

ROLE_CAPABILITIES: dict[str, frozenset[str]] = {
    "cs": frozenset({"keygen", "encrypt", "enroll", "decrypt", "verdict"}),
    "tps": frozenset({"store", "evaluate"}),
    "sp": frozenset({"encrypt", "query"}),
}

_lock = threading.Lock()
_role: str | None = None


def assume_role(role: str) -> frozenset[str]:
    global _role
    if role not in ROLE_CAPABILITIES:
        raise CapabilityError(f"unknown role {role!r}")
    with _lock:
        if _role is not None and _role != role:
            raise CapabilityError(f"process already acts as {_role}, cannot become {role}")
        _role = role
    return ROLE_CAPABILITIES[role]


def current_role() -> str | None:
    return _role


def require(capability: str) -> None:
    """Raise unless the current role grants ``capability``.

    A process that never assumed a role (tests, notebooks) is unrestricted.
    """
    if _role is not None and capability not in ROLE_CAPABILITIES[_role]:
        raise CapabilityError(f"role {_role} lacks capability {capability!r}")


def reset_role() -> None:
    """Forget the assumed role. Intended for tests only."""
    global _role
    with _lock:
        _role = None
