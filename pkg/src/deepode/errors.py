"""Exception types shared across the package."""


class DeepOdeError(Exception):
    """Base class for all package-specific errors."""


class InputError(DeepOdeError):
    """Malformed caller input (dimension mismatch, non-finite state, bad interval)."""


class ConfigError(DeepOdeError):
    """Invalid configuration value."""


class NonFiniteError(DeepOdeError):
    """A computation produced NaN or infinity."""


class StiffFailureError(DeepOdeError):
    """Newton iteration failed to converge at the minimum step size."""


class StepSizeError(DeepOdeError):
    """Adaptive error control requested a step below h_min."""


class RangeError(DeepOdeError):
    """Range estimation failed for every seed trajectory."""


class DecompositionError(DeepOdeError):
    """Eigen-decomposition is defective or too ill-conditioned to trust."""


class PreprocessError(DeepOdeError):
    """Input data violates preprocessing assumptions (e.g. negative value on a Box-Cox dimension)."""


class TrainingError(DeepOdeError):
    """Training aborted (non-finite loss or gradients)."""


class InferenceError(DeepOdeError):
    """Model evaluation produced a non-finite intermediate."""


class ModelFormatError(DeepOdeError):
    """Model or dataset file is corrupted, truncated or of an unsupported version."""


class AlignmentError(DeepOdeError):
    """Two trajectories do not share a common time grid."""
