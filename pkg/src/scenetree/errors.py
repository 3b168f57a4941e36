"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible shapes; message names the offending axes."""


class ContractError(ValueError):
    """A caller violated a documented precondition."""


class NumericError(ArithmeticError):
    """A forward or backward pass produced NaN or Inf."""


class BracketParseError(ValueError):
    """Malformed bracketed parse text."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class TreeConversionError(ValueError):
    """A sentence tree could not be converted to a semantic tree."""


class CheckpointError(ValueError):
    """Checkpoint file is malformed or has the wrong magic/version."""


class ConfigError(ValueError):
    """Bad key or value in a training config file."""


class DatasetError(ValueError):
    """A dataset file is missing, corrupt, or violates an invariant."""


class TrainingDiverged(RuntimeError):
    """Training hit a non-finite loss; carries the last good checkpoint path."""

    def __init__(self, message, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path
