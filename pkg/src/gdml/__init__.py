"""Geo-distributed training of l2-regularized logistic regression.

The package trains a linear model whose data lives in several data
centers, either by shipping the data to one site first (centralized) or
by running the optimization across sites (distributed), and audits every
byte that crosses a data-center boundary.
"""

from gdml.errors import (
    ConfigError,
    GdmlError,
    LineSearchError,
    OptimizationError,
    ParseError,
    TransportError,
)

__version__ = "0.1.0"

__all__ = [
    "GdmlError",
    "ParseError",
    "ConfigError",
    "TransportError",
    "OptimizationError",
    "LineSearchError",
    "__version__",
]
