"""Exception types shared across the toolkit."""


class MetaselectError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(MetaselectError):
    """Invalid inputs: bad dimensions, bad parameter values, malformed config files."""


class GenerationError(MetaselectError):
    """A task generator could not produce a valid task (e.g. no connected maze)."""


class NumericalError(MetaselectError):
    """A linear solve or gradient computation produced an unusable result."""


class StageError(MetaselectError):
    """A pipeline stage failed; carries the stage name for diagnostics."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[stage: {stage}] {message}")
        self.stage = stage
