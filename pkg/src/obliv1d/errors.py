"""Exception hierarchy shared by all modules.

The CLI maps these onto process exit codes: UsageError -> 2, ProtocolAbort -> 4,
anything else derived from Obliv1dError -> 3.
"""


class Obliv1dError(Exception):
    """Base class for every error raised by this package."""


class UsageError(Obliv1dError):
    """Bad flags, bad parameter combinations, malformed user input."""


class RingMismatchError(Obliv1dError):
    """Mixed operands from different ring descriptors."""


class TransportError(Obliv1dError):
    """Connection setup, framing or handshake failure."""


class FormatError(Obliv1dError):
    """Malformed model / vector / preprocessing file."""


class PreprocExhausted(Obliv1dError):
    """A party asked for more correlated randomness than the dealer supplied."""


class BoundError(Obliv1dError):
    """A value left the statically validated range (ring headroom, uint8 range)."""


class ProtocolAbort(Obliv1dError):
    """Cheating detected (MAC check, commitment mismatch, inconsistent open).

    Fail-stop: the session is dead once this is raised. No cheater
    identification is attempted.
    """
