"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array shapes do not compose (includes the offending layer in the message)."""


class NumericsError(FloatingPointError):
    """A forward/backward pass produced NaN or Inf."""


class FormatError(ValueError):
    """A binary file (IDX, CIFAR batch, checkpoint) is malformed or truncated."""


class ConfigError(ValueError):
    """Invalid or incomplete configuration."""
