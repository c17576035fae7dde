class InvalidInputError(ValueError):
    """Raised when arguments violate an operation's preconditions."""


class FormatError(ValueError):
    """A vector or graph file could not be decoded."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ProtocolError(ValueError):
    """A wire frame is malformed."""


class TransportError(RuntimeError):
    """A peer did not deliver an expected frame."""

    def __init__(self, peer: int, round: int, msg_type: str, reason: str = "timeout"):
        super().__init__(f"peer {peer} round {round} {msg_type}: {reason}")
        self.peer = peer
        self.round = round
        self.msg_type = msg_type


class ConfigError(ValueError):
    """A build configuration cannot be satisfied."""
