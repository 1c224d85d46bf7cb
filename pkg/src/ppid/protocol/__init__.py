from .parties import (
    CentralServer,
    ServiceProvider,
    ThirdPartyServer,
    Verdict,
    announce_frame,
    enroll_frame,
    run_local,
)
from .store import TpsStore
from .wire import Frame, MsgType, Reason

__all__ = [
    "CentralServer",
    "Frame",
    "MsgType",
    "Reason",
    "ServiceProvider",
    "ThirdPartyServer",
    "TpsStore",
    "Verdict",
    "announce_frame",
    "enroll_frame",
    "run_local",
]
