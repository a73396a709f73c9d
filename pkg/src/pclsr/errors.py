"""Exception types shared across the package."""


class DimensionError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class ParameterError(ValueError):
    pass


class RangeError(ValueError):
    pass


class IntegrityError(RuntimeError):
    """Dataset on disk does not match what the loader expects."""


class SchemaVersionError(RuntimeError):
    pass


class NumericAbort(RuntimeError):
    """Raised when a training loss becomes non-finite.

    ``batch_indices`` holds the dataset indices of the offending batch.
    """

    def __init__(self, message, step=None, batch_indices=None):
        super().__init__(message)
        self.step = step
        self.batch_indices = list(batch_indices or [])
