"""Discrete exterior calculus heat conduction on tetrahedral meshes with crack insertion."""
from .assembly import (
    AssemblyError,
    Conductivity,
    SaddleSystem,
    apply_dirichlet,
    apply_neumann,
    assemble,
    crack_face,
    eliminate_face,
)
from .complex import SimplicialComplex, build_complex, coboundary, non_boundary_faces
from .generators import SIDE_MARKERS, generate_bcc_cube, generate_cube, generate_jittered_cube
from .geometry import DEFAULT_LIMITER, DegenerateMeshError, DualGeometry, compute_geometry, hodge_star, whitney_vector
from .mesh_io import MeshError, RawMesh, parse_tetgen, read_tetgen, sort_mesh, write_tetgen, write_vtk
from .partition import PartitionPlan, block_partition, build_partition, halo_exchange
from .solver import Solution, SolverConfig, residual, schur_complement, solve, solve_direct

__version__ = "0.1.0"
