"""Random walks on the lamplighter group with non-trivial Poisson boundary
and Liouville opposite walk: construction, sampling and diagnostics."""

from .group import GroupElement, GroupSpec, LAMPLIGHTER

__all__ = ["GroupElement", "GroupSpec", "LAMPLIGHTER"]
__version__ = "0.1.0"
