"""Exception types shared across the package."""


class KoopfuseError(Exception):
    """Base class for all package errors."""


class ConfigError(KoopfuseError):
    """Invalid configuration, parameters, or input shapes."""


class NonFiniteStateError(KoopfuseError):
    """Simulation or evaluation produced NaN/inf."""

    def __init__(self, message, step=None, traj_id=None, layer=None):
        super().__init__(message)
        self.step = step
        self.traj_id = traj_id
        self.layer = layer


class SingularOutputError(KoopfuseError):
    """Output map evaluated too close to a singularity."""


class ZeroVarianceError(KoopfuseError):
    """A coordinate (or field) has no variance where variance is required."""


class TrainingDivergedError(KoopfuseError):
    """Gradient training produced a non-finite loss."""

    def __init__(self, message, epoch=None, stage=None):
        super().__init__(message)
        self.epoch = epoch
        self.stage = stage


class DecompositionError(KoopfuseError):
    """A spectral or structural decomposition failed its validity check."""
