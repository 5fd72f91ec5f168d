"""Multi-interest self-supervised CTR training stack.

A small numpy library that trains click-through-rate models with
attention pooling over behavior sequences, optionally regularized by
contrastive losses over convolutional multi-interest views, all on a
hand-rolled reverse-mode autodiff tape.
"""

from .errors import (
    ConfigError,
    DataError,
    DegenerateDatasetError,
    FormatError,
    MetricError,
    MissError,
    NumericalError,
    ShapeError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "DegenerateDatasetError",
    "FormatError",
    "MetricError",
    "MissError",
    "NumericalError",
    "ShapeError",
    "__version__",
]
