"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class KdynError(Exception):
    """Base class for all library errors."""


class ShapeError(KdynError, ValueError):
    pass


class InvalidDimensionError(ShapeError):
    pass


class InvalidHorizonError(ShapeError):
    pass


class ConfigError(KdynError, ValueError):
    pass


class SizingError(ConfigError):
    """Requested batch/horizon would not fit in available memory."""


class DataFormatError(KdynError):
    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class CacheMismatchError(KdynError, RuntimeError):
    """Backward pass called with a cache that does not belong to the network."""


class NumericalError(KdynError, ArithmeticError):
    pass


class TrainingDivergence(NumericalError):
    def __init__(self, message, param=None, epoch=None):
        self.param = param
        self.epoch = epoch
        super().__init__(message)


class SimulationBlowup(NumericalError):
    pass


class RolloutBlowup(NumericalError):
    def __init__(self, message, step=None):
        self.step = step
        super().__init__(message)


class OracleFailure(NumericalError):
    pass
