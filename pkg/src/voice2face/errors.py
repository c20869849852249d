"""Exception types shared across the package."""


class Voice2FaceError(Exception):
    """Base class for package errors."""


class ShapeError(Voice2FaceError):
    """A tensor dimension does not match what an operation requires.

    Carries enough structure to name the offending dimension in messages
    and tests.
    """

    def __init__(self, where, dimension, expected, actual):
        self.where = where
        self.dimension = dimension
        self.expected = expected
        self.actual = actual
        super().__init__(
            f"{where}: dimension '{dimension}' expected {expected}, got {actual}"
        )


class NotFiniteError(Voice2FaceError):
    """NaN or Inf encountered where finite values are required."""


class AudioError(Voice2FaceError):
    """Invalid or unusable audio input."""


class ManifestError(Voice2FaceError):
    """Dataset manifest missing, malformed, or violating its invariants."""


class CheckpointError(Voice2FaceError):
    """Checkpoint file missing, corrupt, or from an unknown version."""


class EvaluationError(Voice2FaceError):
    """An evaluation protocol refused to run (e.g. unreliable probe)."""


class TrainingAborted(Voice2FaceError):
    """Training stopped early; carries the iteration it stopped at."""

    def __init__(self, iteration, reason):
        self.iteration = iteration
        self.reason = reason
        super().__init__(f"training aborted at iteration {iteration}: {reason}")
