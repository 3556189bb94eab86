"""Desk-scale tetrahedral meshes of the unit cube.

Side markers: 1 x=0, 2 x=1, 3 y=0, 4 y=1, 5 z=0, 6 z=1.
"""
from __future__ import annotations

import itertools

import numpy as np
from scipy.spatial import Delaunay

from .mesh_io import MeshError, RawMesh, signed_tet_volumes

SIDE_MARKERS = {1: (0, 0.0), 2: (0, 1.0), 3: (1, 0.0), 4: (1, 1.0), 5: (2, 0.0), 6: (2, 1.0)}


def _grid_index(n):
    m = n + 1

    def idx(i, j, k):
        return (i * m + j) * m + k

    return idx


def _orient(points, tets):
    vol = signed_tet_volumes(points[tets])
    tets = tets.copy()
    neg = vol < 0
    tets[neg, 2], tets[neg, 3] = tets[neg, 3], tets[neg, 2].copy()
    return tets


def boundary_faces_of(tets: np.ndarray) -> np.ndarray:
    """Faces belonging to exactly one tetrahedron, as sorted node triples."""
    tris = np.sort(tets[:, [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]]].reshape(-1, 3), axis=1)
    uniq, counts = np.unique(tris, axis=0, return_counts=True)
    return uniq[counts == 1]


def mark_cube_sides(points: np.ndarray, faces: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    markers = np.zeros(len(faces), dtype=np.int64)
    fp = points[faces]
    for marker, (axis, value) in SIDE_MARKERS.items():
        on = np.all(np.abs(fp[:, :, axis] - value) <= tol, axis=1)
        markers[on & (markers == 0)] = marker
    return markers


def _cube_mesh(points, tets) -> RawMesh:
    tets = _orient(points, np.asarray(tets, dtype=np.int64))
    faces = boundary_faces_of(tets)
    markers = mark_cube_sides(points, faces)
    if np.any(markers == 0):
        raise MeshError("boundary face not on a cube side")
    return RawMesh(points, tets, faces, markers)


def _grid_points(n):
    g = np.linspace(0.0, 1.0, n + 1)
    x, y, z = np.meshgrid(g, g, g, indexing="ij")
    return np.column_stack([x.ravel(), y.ravel(), z.ravel()])


def generate_cube(n: int) -> RawMesh:
    """Unit cube, ``n`` cells per axis, each cell cut into 6 Kuhn tetrahedra.

    All six tetrahedra of a cell share the cell diagonal, hence the same
    circumcenter, so the faces between them have zero-length dual edges.
    """
    if n < 1:
        raise MeshError("generate_cube needs n >= 1")
    idx = _grid_index(n)
    tets = []
    for i, j, k in itertools.product(range(n), repeat=3):
        for perm in itertools.permutations(range(3)):
            v = [i, j, k]
            chain = [idx(*v)]
            for axis in perm:
                v[axis] += 1
                chain.append(idx(*v))
            tets.append(chain)
    return _cube_mesh(_grid_points(n), np.array(tets))


def _cube_points_on_boundary(pts):
    return np.any((pts <= 0.0) | (pts >= 1.0), axis=1)


def generate_jittered_cube(n: int, jitter: float = 0.2, seed: int = 0) -> RawMesh:
    """Delaunay tetrahedralisation of a perturbed ``(n+1)^3`` grid.

    Interior nodes move by up to ``jitter`` cell widths in every direction;
    nodes on a cube side move only within that side.  Breaking the
    co-spherical grid configurations gives strictly positive dual edge lengths
    for most seeds.
    """
    if n < 1:
        raise MeshError("generate_jittered_cube needs n >= 1")
    rng = np.random.default_rng(seed)
    pts = _grid_points(n)
    h = 1.0 / n
    shift = rng.uniform(-jitter * h, jitter * h, size=pts.shape)
    fixed = (pts <= 0.0) | (pts >= 1.0)
    shift[fixed] = 0.0
    pts = pts + shift
    return delaunay_mesh(pts)


def delaunay_mesh(points: np.ndarray) -> RawMesh:
    """Delaunay mesh of a point set filling the unit cube (corners included)."""
    points = np.asarray(points, dtype=float)
    tri = Delaunay(points, qhull_options="Qbb Qc Qz Q12")
    tets = tri.simplices.astype(np.int64)
    vol = np.abs(signed_tet_volumes(points[tets]))
    tets = tets[vol > 1e-14 * vol.max()]
    return _cube_mesh(points, tets)


def generate_bcc_cube(n: int) -> RawMesh:
    """Body-centred cubic tetrahedralisation of the unit cube, ``n`` cells per axis.

    Grid nodes plus one node per cell centre.  Each pair of face-adjacent
    centres spans an octahedron cut into four tetrahedra around the
    centre-centre axis; at the cube sides the half-octahedron pyramid is cut
    into two along the diagonal through its lowest-numbered corner.  All
    tetrahedra have volume ``1 / (12 n^3)``.  Interior dual edges have
    positive length; the pyramids on the sides carry zero and negative ones,
    so the limited fraction shrinks like ``1/n``.
    """
    if n < 1:
        raise MeshError("generate_bcc_cube needs n >= 1")
    idx = _grid_index(n)
    n_grid = (n + 1) ** 3

    def centre(i, j, k):
        return n_grid + (i * n + j) * n + k

    tets = []
    for cell in itertools.product(range(n), repeat=3):
        for axis in range(3):
            u, w = [a for a in range(3) if a != axis]
            for side in (0, 1):
                # square of the cell face normal to `axis` on the given side
                square = []
                for du, dw in ((0, 0), (1, 0), (1, 1), (0, 1)):
                    v = list(cell)
                    v[axis] += side
                    v[u] += du
                    v[w] += dw
                    square.append(idx(*v))
                nb = list(cell)
                nb[axis] += 1 if side else -1
                c = centre(*cell)
                if 0 <= nb[axis] < n:
                    if side == 1:  # each interior octahedron once
                        c2 = centre(*nb)
                        for q in range(4):
                            tets.append([c, c2, square[q], square[(q + 1) % 4]])
                else:
                    r = int(np.argmin(square))
                    sq = square[r:] + square[:r]
                    tets.append([c, sq[0], sq[1], sq[2]])
                    tets.append([c, sq[0], sq[2], sq[3]])
    h = 1.0 / n
    g = (np.arange(n) + 0.5) * h
    x, y, z = np.meshgrid(g, g, g, indexing="ij")
    centres = np.column_stack([x.ravel(), y.ravel(), z.ravel()])
    return _cube_mesh(np.vstack([_grid_points(n), centres]), np.array(tets))


def bcc_cells_for_volume(max_volume: float) -> int:
    """Smallest ``n`` whose BCC tetrahedra respect a maximum-volume bound."""
    if max_volume <= 0:
        raise MeshError("max_volume must be positive")
    n = max(1, int(np.ceil((1.0 / (12.0 * max_volume)) ** (1.0 / 3.0) - 1e-9)))
    while 1.0 / (12.0 * n**3) > max_volume:
        n += 1
    return n
