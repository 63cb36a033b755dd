"""Membership and attribute inference against overfit classifiers on binary data."""

from .core import (
    BitVector,
    Dataset,
    PartialVector,
    SplitSpec,
    complete,
    distance_to_dataset,
    hamming,
    sample_neighbor,
    split_and_sample,
)
from .errors import (
    AttrInfError,
    BudgetError,
    ConfigError,
    DomainError,
    ExhaustionError,
    FormatError,
    SchemaError,
    TrainingDivergedError,
)

__version__ = "0.1.0"
