"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor shape does not match what the operation requires."""


class VocabularyError(ValueError):
    """Token or token id outside the vocabulary."""


class FormatError(ValueError):
    """A dataset or checkpoint file is corrupt or has an unexpected layout."""


class ConfigError(ValueError):
    """A config file contains unknown keys or ill-typed values."""


class CompatibilityError(RuntimeError):
    """A checkpoint cannot be loaded into the requested model."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""
