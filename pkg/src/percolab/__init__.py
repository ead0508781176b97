"""Continuum percolation on degree-bounded spatial graphs."""

from .errors import ConfigError, InvalidInputError, PercolabError, ResourceLimitError
from .geom import MarkedPoint, Norm, Point, PointConfiguration, Window

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "InvalidInputError",
    "MarkedPoint",
    "Norm",
    "PercolabError",
    "Point",
    "PointConfiguration",
    "ResourceLimitError",
    "Window",
]
