"""Exception hierarchy shared by all evpose modules."""


class EvposeError(Exception):
    pass


class EventFormatError(EvposeError):
    """Malformed EVS1/CSV/EFR1/NNW1 content. ``offset`` is the byte offset of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class EventOrderError(EvposeError):
    def __init__(self, index, prev_t, t):
        super().__init__(f"timestamps not monotonic at record {index}: {t} < {prev_t}")
        self.index = index


class EventBoundsError(EvposeError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class NoTargetError(EvposeError):
    pass


class StructuralError(EvposeError):
    """Tensor shape does not fit a layer."""


class StateError(EvposeError):
    pass


class TrainingError(EvposeError):
    pass


class PredictionError(EvposeError):
    pass


class InsufficientPointsError(EvposeError):
    pass


class NoSolutionError(EvposeError):
    pass


class ConfigError(EvposeError):
    pass
