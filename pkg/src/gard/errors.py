class ConfigError(ValueError):
    """A hyperparameter or flag is outside its valid range."""


class DivergedError(FloatingPointError):
    """Training produced a non-finite loss or gradient."""


class DataError(ValueError):
    """Input data disagree with the model (e.g. a label outside 0..C-1)."""
