"""Exception hierarchy. The CLI maps these onto its exit codes."""


class LvtopoError(Exception):
    """Base class for all package errors."""


class DataError(LvtopoError, ValueError):
    """Input data violates a precondition (shape, mask, meter set...)."""


class EmptySelectionError(DataError):
    """A time or meter selection produced no columns/rows."""


class InadmissibleStateError(DataError):
    """A switch state vector is not in the bar's admissible catalog."""


class UndefinedCorrelationError(DataError):
    """Too few joint observations, or a constant series on the overlap."""


class InvalidDistanceError(DataError):
    """A distance matrix still holds invalid pairs where valid ones are required."""


class MeterSetMismatch(DataError):
    def __init__(self, only_predicted, only_truth):
        self.only_predicted = sorted(only_predicted)
        self.only_truth = sorted(only_truth)
        super().__init__(
            f"meter sets differ: only in predicted {self.only_predicted}, "
            f"only in truth {self.only_truth}"
        )


class PowerFlowError(LvtopoError, RuntimeError):
    """The sweep did not converge or the network is not radial."""


class ConfigError(LvtopoError, ValueError):
    """Configuration or experiment file could not be parsed or validated."""
