"""Piecewise smooth flows, Poincare maps and inclination-lemma experiments."""

from .errors import PSVFError
from .flow import FlowControls, Trajectory, flow_map, solve
from .lemma import (Box, ProofConstants, disk_distance, lambda_experiment, lambda_set_depth, measure_constants,
                    phase_sweep, verify_bounds)
from .manifolds import Disk, ManifoldAtlas, continue_manifold, find_transversal_intersection, start_atlas
from .maps import FunctionMap, LinearMap, SectionMap
from .poincare import ExtendedSystem, PoincareMap, SaddleData, find_fixed_point
from .systems import PiecewiseSystem, SmoothField, SwitchingFunction, classify_point
from .variational import flow_jacobian, saltation_matrix

__version__ = "0.1.0"

__all__ = [
    "PSVFError",
    "FlowControls",
    "Trajectory",
    "solve",
    "flow_map",
    "Box",
    "ProofConstants",
    "measure_constants",
    "verify_bounds",
    "disk_distance",
    "lambda_experiment",
    "phase_sweep",
    "lambda_set_depth",
    "Disk",
    "ManifoldAtlas",
    "start_atlas",
    "continue_manifold",
    "find_transversal_intersection",
    "SectionMap",
    "LinearMap",
    "FunctionMap",
    "ExtendedSystem",
    "PoincareMap",
    "SaddleData",
    "find_fixed_point",
    "PiecewiseSystem",
    "SmoothField",
    "SwitchingFunction",
    "classify_point",
    "flow_jacobian",
    "saltation_matrix",
]
