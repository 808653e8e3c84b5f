"""Exception hierarchy shared by every module of the toolkit."""


class BackdoorError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(BackdoorError):
    """A dataset or checkpoint file does not follow its binary layout."""


class ConsistencyError(BackdoorError):
    """Two inputs that must agree (e.g. image and label counts) do not."""


class PlacementError(BackdoorError):
    """A trigger's covering box does not fit inside the host image."""


class ConfigurationError(BackdoorError):
    """An experiment, training or poisoning setting violates its invariants."""


class TrainingError(BackdoorError):
    """Training diverged (non-finite loss)."""

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class EvaluationError(BackdoorError):
    """An evaluation could not be carried out (e.g. no eligible items)."""
