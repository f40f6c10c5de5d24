"""Two-tier methylome analysis: attribution-ranked effector loci and graph-ranked regulatory hubs."""

from .errors import MethylhubError

__version__ = "0.1.0"
__all__ = ["MethylhubError", "__version__"]
