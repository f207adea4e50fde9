"""Exception types shared across the package."""


class FpanError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(FpanError, ValueError):
    """Tensor or kernel shapes are inconsistent with the requested op."""


class CheckpointError(FpanError, ValueError):
    """Checkpoint file is malformed, truncated, or incompatible."""


class IdxFormatError(FpanError, ValueError):
    """IDX file has a bad magic number or inconsistent dimensions."""


class PpmFormatError(FpanError, ValueError):
    """PPM file is not a well-formed binary P6 image."""


class SceneGenError(FpanError, ValueError):
    """Scene synthesis could not satisfy the requested constraints."""


class OptimizerError(FpanError, RuntimeError):
    """Optimizer saw a missing or non-finite gradient."""


class TrainingDiverged(FpanError, RuntimeError):
    """Training loss became non-finite; last good state was kept."""
