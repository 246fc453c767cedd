"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A config file parsed but contained an invalid or unknown field."""


class CheckpointError(RuntimeError):
    """A checkpoint file is missing, corrupt, or has an unsupported format version."""


class EmbedderError(RuntimeError):
    """A pluggable embedder backend failed while computing features."""


class NonFiniteLossError(RuntimeError):
    """A loss term became NaN/Inf; training must abort with a diagnostic."""

    def __init__(self, term: str, value: float):
        super().__init__(f"non-finite loss term {term!r}: {value!r}")
        self.term = term
        self.value = value
