"""Exception hierarchy.

Every error raised by this package derives from :class:`HoigroundError` and
carries a short ``category`` string that the CLI uses for its machine-parsable
``ERROR:<category>:`` prefix.
"""


class HoigroundError(Exception):
    category = "error"


class ArgumentError(HoigroundError, ValueError):
    """Invalid argument value (bad dimensions, non-positive temperature, ...)."""

    category = "argument"


class ShapeError(HoigroundError, ValueError):
    """Array dimensions do not line up."""

    category = "shape"


class EmptyMaskError(HoigroundError, ValueError):
    """A softmax mask (or region mask) excludes every position."""

    category = "mask"


class FormatError(HoigroundError, ValueError):
    """Malformed binary or JSON file. ``offset`` is the byte position, if known."""

    category = "format"

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(HoigroundError, ValueError):
    """Unknown configuration key/section or missing required configuration."""

    category = "config"


class GenerationError(HoigroundError, RuntimeError):
    """Synthetic data generation could not satisfy its constraints."""

    category = "generation"


class NumericalError(HoigroundError, ArithmeticError):
    """A non-finite value appeared mid-computation; names the offending op."""

    category = "numerical"


class OracleError(HoigroundError, ArithmeticError):
    """The finite-difference oracle hit a non-finite function evaluation."""

    category = "numerical"
