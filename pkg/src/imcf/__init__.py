"""Inverse mean curvature flow of spacelike graphs in cosmological spacetimes."""

__version__ = "0.1.0"

from .errors import ConfigError, IMCFError, NumericalError, PreconditionError  # noqa: E402
from .flow import FlowConfig, FlowTrace, run  # noqa: E402
from .geometry import GeometrySnapshot, GraphState, compute_geometry  # noqa: E402
from .grid import PeriodicGrid  # noqa: E402
from .spacetime import (  # noqa: E402
    SpacetimeModel,
    make_exp_rw,
    make_minkowski_slab,
    make_sads_interior,
    reparameterize,
)

__all__ = [
    "ConfigError",
    "FlowConfig",
    "FlowTrace",
    "GeometrySnapshot",
    "GraphState",
    "IMCFError",
    "NumericalError",
    "PeriodicGrid",
    "PreconditionError",
    "SpacetimeModel",
    "compute_geometry",
    "make_exp_rw",
    "make_minkowski_slab",
    "make_sads_interior",
    "reparameterize",
    "run",
    "__version__",
]
