"""Exception hierarchy shared by every crdnav module."""


class CrdNavError(Exception):
    """Base class for all errors raised by crdnav."""


class DimensionError(CrdNavError, ValueError):
    pass


class ContractError(CrdNavError, ValueError):
    pass


class NumericError(CrdNavError, ArithmeticError):
    pass


class ConfigError(CrdNavError, ValueError):
    pass


class ParameterError(CrdNavError, ValueError):
    pass


class LifecycleError(CrdNavError, RuntimeError):
    pass


class ScenarioTooDenseError(CrdNavError, RuntimeError):
    pass


class NotReadyError(CrdNavError, RuntimeError):
    """Raised when the replay buffer holds fewer transitions than a batch needs."""


class IntegrityError(CrdNavError, ValueError):
    """Checkpoint payload failed its checksum or is truncated."""


class LayoutError(CrdNavError, ValueError):
    """Checkpoint latent layout or format version does not match the caller."""


class MalformedRecordError(CrdNavError, ValueError):
    pass


class EmptySuiteError(CrdNavError, ValueError):
    pass


class TrainingAborted(CrdNavError, RuntimeError):
    def __init__(self, message, snapshot_path=None):
        super().__init__(message)
        self.snapshot_path = snapshot_path
