"""Symbolic regression toolkit: expression trees, interaction-transformation
models, lexicase selection, NSGA-II survival and SimHash simplification."""
from .errors import (ConfigError, DataError, NumericFailure, SRLabError, TreeParseError,
                     TreeStructureError)

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "NumericFailure", "SRLabError", "TreeParseError",
           "TreeStructureError", "__version__"]
