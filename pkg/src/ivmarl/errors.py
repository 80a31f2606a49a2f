"""Shared exception types."""


class ConfigError(ValueError):
    """Raised when a scenario, learner, or experiment configuration is invalid."""


class CheckpointError(RuntimeError):
    """Raised when a checkpoint file is corrupt or has an unsupported version."""
