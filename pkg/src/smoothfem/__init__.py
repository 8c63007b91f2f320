"""Nonlinear electromechanics on tetrahedral meshes with smoothed finite elements."""

from .assembly import METHODS, assemble, build_discretization
from .mesh import HexMesh, TetMesh, parse_mesh, read_mesh
from .scenarios import default_dea, default_myo, generate_cube_mesh, read_config
from .solver import NewtonSettings, newton_solve, time_loop

__all__ = [
    "METHODS",
    "HexMesh",
    "NewtonSettings",
    "TetMesh",
    "assemble",
    "build_discretization",
    "default_dea",
    "default_myo",
    "generate_cube_mesh",
    "newton_solve",
    "parse_mesh",
    "read_config",
    "read_mesh",
    "time_loop",
]
__version__ = "0.1.0"
