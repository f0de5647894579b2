"""Exception hierarchy shared by all deskbot subsystems."""


class DeskbotError(Exception):
    """Base class for every error raised by this package."""


# --- bus ---

class BusClosed(DeskbotError):
    pass


class TimestampRegression(DeskbotError):
    pass


class InvalidPattern(DeskbotError):
    pass


class InvalidTopic(DeskbotError):
    pass


# --- translation / unified frames ---

class DuplicateSchema(DeskbotError):
    pass


class NoAdapter(DeskbotError):
    pass


class MalformedPayload(DeskbotError):
    pass


class DecodeError(DeskbotError):
    """Raised when bytes cannot be decoded into a unified frame.

    ``offset`` is the byte offset of the failure when known, else 0.
    """

    def __init__(self, message: str, offset: int = 0):
        super().__init__(message)
        self.offset = offset


# --- recorder ---

class NoData(DeskbotError):
    pass


class InsufficientFrames(DeskbotError):
    pass


class AlignRateTooHigh(DeskbotError):
    pass


class EmptyOverlap(DeskbotError):
    pass


class SchemaMismatch(DeskbotError):
    pass


class EpisodeIOError(DeskbotError):
    pass


class IoError(DeskbotError):
    pass


# --- policy ---

class BadRange(DeskbotError):
    pass


class BadTimestep(DeskbotError):
    pass


class EmptyDataset(DeskbotError):
    pass


class BadSamplerConfig(DeskbotError):
    pass


class VersionMismatch(DeskbotError):
    pass


# --- simworld ---

class TaskAlreadyDone(DeskbotError):
    pass


# --- bridge ---

class BindError(DeskbotError):
    pass


class HandshakeRejected(DeskbotError):
    pass


class BridgeTimeout(DeskbotError):
    pass


class FrameTooLarge(DeskbotError):
    pass


class EndpointUnavailable(DeskbotError):
    pass
