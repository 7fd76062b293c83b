class ConfigurationError(ValueError):
    """Invalid shapes, sizes or hyperparameters."""


class DataError(ValueError):
    """Malformed or unusable input data (files, datasets, trajectories)."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class PipelineError(RuntimeError):
    """Failure inside the online SLAM loop or a checkpoint/format mismatch."""


class GenerationError(RuntimeError):
    """Trajectory or dataset generation could not satisfy its constraints."""
