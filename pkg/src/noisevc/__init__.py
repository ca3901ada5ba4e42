"""Zero-shot voice conversion at desk scale.

The pipeline disentangles linguistic content from speaker identity with a
vector-quantized content encoder (instance-normalized, contrastively
regularized) and a time-averaged speaker encoder, then converts voices by
cross-wiring the two paths. A synthetic factorized corpus with oracle labels
makes the disentanglement claims directly testable.
"""

__version__ = "0.1.0"

from noisevc.errors import (
    NvcError,
    UsageError,
    ConfigError,
    DataError,
    IngestionError,
    EmptyClipError,
    TooShortError,
    ShapeError,
    DegenerateInputError,
    SamplingError,
    NumericalError,
)

__all__ = [
    "NvcError",
    "UsageError",
    "ConfigError",
    "DataError",
    "IngestionError",
    "EmptyClipError",
    "TooShortError",
    "ShapeError",
    "DegenerateInputError",
    "SamplingError",
    "NumericalError",
]
