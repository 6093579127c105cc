"""Exception hierarchy shared across the package."""


class FednodError(Exception):
    """Base class for all package errors."""


class DimensionError(FednodError, ValueError):
    """A tensor shape does not fit the operation.

    ``axis`` names the offending axis when one can be singled out.
    """

    def __init__(self, message, axis=None):
        super().__init__(message)
        self.axis = axis


class ValidationError(FednodError, ValueError):
    pass


class TrainingDivergedError(FednodError, ArithmeticError):
    def __init__(self, message, round_index=None, client_id=None):
        if round_index is not None or client_id is not None:
            message = f"{message} (round={round_index}, client={client_id})"
        super().__init__(message)
        self.round_index = round_index
        self.client_id = client_id


class ConfigError(FednodError, ValueError):
    pass


class IncompatibleWeightsError(FednodError, ValueError):
    pass


class AggregationError(FednodError, ValueError):
    pass


class DatasetLayoutError(FednodError):
    pass


class StratificationError(FednodError, ValueError):
    pass


class PartitionError(FednodError, ValueError):
    pass


class ProtocolError(FednodError):
    """Malformed frame or out-of-order message."""


class IntegrityError(ProtocolError):
    """CRC32 of a received payload does not match."""


class PayloadSizeError(ProtocolError):
    pass


class DecodeError(ProtocolError):
    """Weights payload could not be decoded; ``offset`` is the failing byte offset."""

    def __init__(self, message, offset):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset
