"""Exception hierarchy shared across the package."""


class AttrInfError(Exception):
    """Base class for all package errors."""


class SchemaError(AttrInfError):
    """Vector widths or dataset schemas do not line up."""


class DomainError(AttrInfError, ValueError):
    """An argument lies outside the operation's domain."""


class ExhaustionError(AttrInfError):
    """Rejection sampling ran out of attempts."""


class BudgetError(AttrInfError):
    """An enumeration would exceed the configured budget."""


class FormatError(AttrInfError):
    """A persisted file is malformed."""


class TrainingDivergedError(AttrInfError):
    """Loss became NaN or infinite during training."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


class ConfigError(AttrInfError):
    """Experiment configuration failed validation."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
