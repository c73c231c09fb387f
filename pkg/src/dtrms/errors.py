"""Exception hierarchy shared across the package."""


class DtrmsError(Exception):
    """Base class for every error raised by this package."""


class OutOfRange(DtrmsError, ValueError):
    """A value lies outside the domain an operation is defined on."""


class BadChannel(DtrmsError, ValueError):
    pass


class Uncalibrated(DtrmsError):
    pass


class DegenerateInput(DtrmsError, ValueError):
    pass


class InvalidConfig(DtrmsError, ValueError):
    """A configuration value violates an invariant.

    ``field`` names the offending entry (dotted path where known).
    """

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


# --- frame codec -----------------------------------------------------------

class FrameError(DtrmsError, ValueError):
    """Raised for any byte string that is not a valid telemetry frame."""


class EmptyData(FrameError):
    pass


class InvalidPayload(FrameError):
    pass


class BadDelimiter(FrameError):
    pass


class TruncatedFrame(FrameError):
    pass


class ChecksumMismatch(FrameError):
    pass


class UnknownFrameType(FrameError):
    pass


class TrailingGarbage(FrameError):
    pass


class LengthMismatch(FrameError):
    """Checksum is fine but the length field does not fit the frame type."""


# --- network ---------------------------------------------------------------

class TopologyError(DtrmsError, ValueError):
    pass


class DuplicateNodeId(TopologyError):
    pass


class NoCoordinator(TopologyError):
    pass


class MultipleCoordinators(TopologyError):
    pass


class NoRoute(DtrmsError):
    pass


# --- coordinator -----------------------------------------------------------

class UnknownDevice(DtrmsError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class MalformedQuery(DtrmsError, ValueError):
    pass
