"""Numerical laboratory for planar switching between two stable linear fields."""

from pdmplab.core import (
    FlowOverflowError,
    HybridState,
    SwitchingParams,
    backward_jacobian,
    det_transversality,
    flow_cumulative,
    flow_forward,
    symmetry_conjugate,
)

__version__ = "0.1.0"

__all__ = [
    "FlowOverflowError",
    "HybridState",
    "SwitchingParams",
    "backward_jacobian",
    "det_transversality",
    "flow_cumulative",
    "flow_forward",
    "symmetry_conjugate",
    "__version__",
]
