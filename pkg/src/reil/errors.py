"""Exception types shared across the package."""


class ReilError(Exception):
    """Base class for all errors raised by this package."""


class EmptyEpisodeError(ReilError):
    pass


class FlagsUnsetError(ReilError):
    pass


class InvalidGammaError(ReilError):
    pass


class RewardConstraintError(ReilError):
    """Intervention reward fails the strict upper-bound constraint."""


class InvalidCapacityError(ReilError):
    pass


class ParseError(ReilError):
    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class ShapeError(ReilError):
    pass


class EmptySequenceError(ReilError):
    pass


class SeqTooLongError(ReilError):
    pass


class InvalidSlopeError(ReilError):
    pass


class InvalidTauError(ReilError):
    pass


class TopologyMismatchError(ReilError):
    """Checkpoint topology hash does not match the receiving network."""


class EmptyBatchError(ReilError):
    pass


class DanglingSuccessorError(ReilError):
    pass


class NoSupervisorDataError(ReilError):
    pass


class MissingTfLabelsError(ReilError):
    pass


class EmptyDatasetError(ReilError):
    pass


class NonFiniteStateError(ReilError):
    pass


class ConfigError(ReilError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class TooShortError(ReilError):
    pass


class LengthMismatchError(ReilError):
    pass


class InvalidWindowError(ReilError):
    pass
