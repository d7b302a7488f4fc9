"""Exception hierarchy. ``category`` feeds the CLI's one-line error reporting."""


class CfzslError(Exception):
    category = "error"


class ShapeError(CfzslError):
    """Operands with incompatible dimensions."""

    category = "shape-error"


class ConfigError(CfzslError):
    """Invalid task/experiment configuration."""

    category = "config-error"


class DataFormatError(CfzslError):
    """Malformed embedding file or dataset payload."""

    category = "data-error"


class FusionError(CfzslError):
    """Fusion weights undefined (both variances zero)."""

    category = "fusion-error"


class TrainingDivergedError(CfzslError):
    """Non-finite loss encountered during training."""

    category = "training-error"
