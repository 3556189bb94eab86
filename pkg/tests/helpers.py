"""Shared mesh builders for the test-suite."""
import functools
import itertools

import numpy as np

from dec3d import RawMesh, build_complex, compute_geometry
from dec3d.crack_sim import ExperimentConfig, prepare
from dec3d.generators import generate_bcc_cube, generate_cube, generate_jittered_cube, delaunay_mesh
from dec3d.solver import SolverConfig

REGULAR_TET = np.array(
    [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]]
) / np.sqrt(8.0)  # unit edge length


def single_tet(points=None, marker=1) -> RawMesh:
    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float) if points is None else points
    tets = np.array([[0, 1, 2, 3]])
    faces = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])
    return RawMesh(pts, tets, faces, np.full(4, marker))


def random_cloud_mesh(n_points: int, seed: int) -> RawMesh:
    """Delaunay mesh of the cube corners plus random interior points."""
    rng = np.random.default_rng(seed)
    corners = np.array(list(itertools.product((0.0, 1.0), repeat=3)))
    pts = np.vstack([corners, rng.uniform(0.02, 0.98, size=(n_points - 8, 3))])
    return delaunay_mesh(pts)


MESHES = {
    "kuhn1": lambda: generate_cube(1),
    "kuhn2": lambda: generate_cube(2),
    "kuhn3": lambda: generate_cube(3),
    "jittered3": lambda: generate_jittered_cube(3, seed=0),
    "jittered4": lambda: generate_jittered_cube(4, seed=1),
    "bcc2": lambda: generate_bcc_cube(2),
    "bcc3": lambda: generate_bcc_cube(3),
    "cloud60": lambda: random_cloud_mesh(60, 3),
}


@functools.lru_cache(maxsize=None)
def mesh(name: str) -> RawMesh:
    return MESHES[name]()


@functools.lru_cache(maxsize=None)
def complex_geometry(name: str):
    cx = build_complex(mesh(name))
    return cx, compute_geometry(cx)


def hot_cold(name: str, kappa: float = 1.0, solver: SolverConfig = None, **kw):
    cx, geo = complex_geometry(name)
    cfg = ExperimentConfig(kappa=kappa, solver=solver or SolverConfig(), **kw)
    return prepare(cx, geo, cfg)
