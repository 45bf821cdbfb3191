"""Unfitted Stokes solver on a fixed background mesh cut by a circular interface.

The velocity/pressure pair lives on the non-exterior part of a uniform
triangulation of the unit square; the interface condition u = g is enforced
weakly through a Lagrange multiplier living on the band of cut elements, with
the stabilization variants compared by the convergence-study harness.
"""

from .mesh import BackgroundMesh, Submesh, build_background_mesh, extract_submesh
from .geometry import CutGeometry, GeometryError, LevelSet, build_cut_geometry
from .quadrature import QuadRule, integrate_fluid, integrate_interface, segment_rule, triangle_rule
from .fespace import FeSpace, build_space
from .assembly import BlockSystem, MethodConfig, SolverError, build_system, solve
from .study import ErrorReport, ExactSolution, estimate_infsup, fit_slope, run_convergence_study

__version__ = "0.1.0"

__all__ = [
    "BackgroundMesh",
    "Submesh",
    "build_background_mesh",
    "extract_submesh",
    "LevelSet",
    "CutGeometry",
    "GeometryError",
    "build_cut_geometry",
    "QuadRule",
    "triangle_rule",
    "segment_rule",
    "integrate_fluid",
    "integrate_interface",
    "FeSpace",
    "build_space",
    "MethodConfig",
    "BlockSystem",
    "SolverError",
    "build_system",
    "solve",
    "ExactSolution",
    "ErrorReport",
    "fit_slope",
    "run_convergence_study",
    "estimate_infsup",
]
