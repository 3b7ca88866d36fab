"""Exception types shared across the package."""


class RCCFError(Exception):
    """Base class for all package errors."""


class ShapeError(RCCFError, ValueError):
    """Operands have incompatible shapes."""


class ConfigError(RCCFError, ValueError):
    """A configuration value is missing or invalid."""


class EmptyExpressionError(RCCFError, ValueError):
    """A referring expression contained no tokens."""


class GenerationError(RCCFError, RuntimeError):
    """The synthetic generator exhausted its rejection budget."""


class DatasetParseError(RCCFError, ValueError):
    """A dataset annotation file is malformed."""


class CheckpointError(RCCFError, ValueError):
    """A checkpoint or tensor container could not be decoded."""


class NonFiniteError(RCCFError, FloatingPointError):
    """A NaN or Inf appeared where finite values are required."""
