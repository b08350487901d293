"""Multi-label risk prediction from clinical notes with event- and label-guided attention."""

from .data import EhrRecord, LabelCatalog, generate_synthetic, load_catalog, load_dataset
from .estimator import LERPClassifier
from .exceptions import (
    ConfigurationError,
    ContractError,
    DataError,
    DimensionError,
    LerpError,
    NumericalError,
    ParseError,
    UndefinedMetricError,
)
from .model import ModelConfig, Network, Variant

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "ContractError",
    "DataError",
    "DimensionError",
    "EhrRecord",
    "LERPClassifier",
    "LabelCatalog",
    "LerpError",
    "ModelConfig",
    "Network",
    "NumericalError",
    "ParseError",
    "UndefinedMetricError",
    "Variant",
    "generate_synthetic",
    "load_catalog",
    "load_dataset",
]
