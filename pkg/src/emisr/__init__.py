"""Super-resolution of gridded emission inventories with small residual CNNs."""

__version__ = "0.1.0"

from .errors import (ConfigError, DegenerateInputError, DomainError, EmisrError, FormatError,
                     IoError, NumericsError, ShapeError, StateError)
from .grid import EmissionGrid, Timestamp, read_grid, write_grid
from .transforms import MaxScaling, QuantileTransform, fit_quantile_transform, load_transform
from .evaluation import evaluate_pairs, nmse_db, ssim, super_resolve

__all__ = [
    "ConfigError", "DegenerateInputError", "DomainError", "EmisrError", "EmissionGrid",
    "FormatError", "IoError", "MaxScaling", "NumericsError", "QuantileTransform", "ShapeError",
    "StateError", "Timestamp", "evaluate_pairs", "fit_quantile_transform", "load_transform",
    "nmse_db", "read_grid", "ssim", "super_resolve", "write_grid",
]
