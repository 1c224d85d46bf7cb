class PpidError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(PpidError):
    pass


class ParamsMismatchError(PpidError):
    pass


class MissingKeyError(PpidError):
    pass


class DecryptionIntegrityError(PpidError):
    """Raised when a ciphertext's noise budget is exhausted."""


class DecodeError(PpidError, ValueError):
    pass


class EncodingError(PpidError, ValueError):
    pass


class ProtocolError(PpidError):
    pass


class TransportError(PpidError):
    """Retryable failure to reach a peer."""


class CapabilityError(PpidError):
    """Raised when a process role attempts an operation it was not granted."""
