"""hp boundary elements for the 3D hypersingular operator with additive Schwarz preconditioners."""
from .assembly import (QuadratureOrders, StabilizationConfig, assemble_h1, assemble_hypersingular,
                       assemble_mass)
from .mesh import MeshHierarchy, SurfaceMesh, generate_fichera, generate_screen, nvb_refine
from .precond import build_b2, build_b3, build_coarse_plus_patch, build_diagonal
from .solvers import pcg, spectral_bounds
from .space import build_dof_map

__all__ = [
    "QuadratureOrders", "StabilizationConfig", "assemble_h1", "assemble_hypersingular",
    "assemble_mass", "MeshHierarchy", "SurfaceMesh", "generate_fichera", "generate_screen",
    "nvb_refine", "build_b2", "build_b3", "build_coarse_plus_patch", "build_diagonal", "pcg",
    "spectral_bounds", "build_dof_map",
]
