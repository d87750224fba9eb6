"""Exception taxonomy shared by all modules.

The CLI maps these onto exit codes: ConfigError -> 2, data-shaped errors
(shape/pairing/parse/degenerate) -> 3, OSError -> 4.
"""


class ZoomshotError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(ZoomshotError):
    """Invalid configuration value or flag combination."""


class UsageError(ZoomshotError):
    """API misuse, e.g. calling backward on a non-scalar node."""


class ShapeError(ZoomshotError):
    """Operand shapes are incompatible; message names both shapes."""


class DegenerateInputError(ZoomshotError):
    """Numerically degenerate input, e.g. a zero-norm row fed to cosine."""


class DegenerateDatasetError(ZoomshotError):
    """Dataset too small or too flat for the requested statistic."""


class EmptyDatasetError(ZoomshotError):
    """Operation requires at least one sample."""


class PairingError(ZoomshotError):
    """Two datasets that must describe the same items row-for-row do not."""


class ValidationError(ZoomshotError):
    """Value-level invariant violated (non-stochastic rows, bad labels, ...)."""


class ParseError(ZoomshotError):
    """Malformed binary file. Carries the byte offset of the defect."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
