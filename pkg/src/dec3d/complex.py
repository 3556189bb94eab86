"""Oriented simplicial 3-complex with signed incidence (boundary) matrices."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .mesh_io import MeshError, RawMesh, signed_tet_volumes


class Simplex(NamedTuple):
    vertices: tuple
    orientation_sign: int = 1


def _unique_rows(rows: np.ndarray):
    """Lexicographically ordered unique rows and the inverse map."""
    uniq, inv = np.unique(rows, axis=0, return_inverse=True)
    return uniq, inv.reshape(-1)


def _row_keys(rows: np.ndarray, base: int) -> np.ndarray:
    keys = np.zeros(len(rows), dtype=np.int64)
    for c in range(rows.shape[1]):
        keys = keys * base + rows[:, c]
    return keys


def _drop_each(cells: np.ndarray) -> np.ndarray:
    """(n, k) -> (n, k, k-1): the i-th slice omits vertex i."""
    k = cells.shape[1]
    idx = np.array([[j for j in range(k) if j != i] for i in range(k)])
    return cells[:, idx]


@dataclass(eq=False)
class SimplicialComplex:
    points: np.ndarray
    edges: np.ndarray  # (E, 2) sorted vertex tuples, lexicographic order
    faces: np.ndarray  # (F, 3)
    tets: np.ndarray  # (M, 4)
    tet_sign: np.ndarray  # orientation of the sorted tuple w.r.t. the ambient space
    boundary: dict  # p -> sparse int matrix, shape (n_{p-1}, n_p)
    face_markers: np.ndarray  # (F,) TetGen markers, 0 for unmarked
    face_tets: np.ndarray  # (F, 2) incident tets, -1 padded
    tet_faces: np.ndarray  # (M, 4) face opposite local vertex i
    face_edges: np.ndarray  # (F, 3) edge opposite local vertex i
    tet_record: np.ndarray  # index of each tet in the source RawMesh

    @property
    def n_nodes(self) -> int:
        return len(self.points)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    def cells(self, p: int) -> np.ndarray:
        if p == 0:
            return np.arange(self.n_nodes).reshape(-1, 1)
        return {1: self.edges, 2: self.faces, 3: self.tets}[p]

    def simplex(self, p: int, i: int) -> Simplex:
        sign = int(self.tet_sign[i]) if p == 3 else 1
        return Simplex(tuple(int(v) for v in self.cells(p)[i]), sign)

    def coboundary(self, p: int) -> sp.csr_matrix:
        return coboundary(self, p)

    @property
    def is_boundary_face(self) -> np.ndarray:
        return self.face_tets[:, 1] < 0

    def boundary_faces(self) -> np.ndarray:
        return np.flatnonzero(self.is_boundary_face)

    def faces_with_marker(self, marker: int) -> np.ndarray:
        return np.flatnonzero((self.face_markers == marker) & self.is_boundary_face)

    def counts(self) -> tuple:
        return (self.n_nodes, self.n_edges, self.n_faces, self.n_tets)


def build_complex(mesh: RawMesh) -> SimplicialComplex:
    """Enumerate all edges and faces of the tetrahedra and their incidences.

    Boundary entries use the alternating convention on sorted simplices; each
    tetrahedron's entries carry the sign of its sorted vertex order so that a
    +1 in ``boundary[3]`` means the face normal (right-hand rule on the sorted
    face vertices) points out of that tetrahedron.
    """
    if len(mesh.tets) == 0:
        raise MeshError("mesh has no tetrahedra")
    raw = np.sort(mesh.tets, axis=1)
    if np.any(raw[:, 1:] == raw[:, :-1]):
        raise MeshError("tetrahedron with repeated node indices")
    order = np.lexsort(raw.T[::-1])
    tets = raw[order]
    if len(np.unique(tets, axis=0)) != len(tets):
        raise MeshError("duplicate tetrahedron")
    vol = signed_tet_volumes(mesh.points[tets])
    tet_sign = np.where(vol >= 0, 1, -1).astype(np.int64)

    alt3 = np.array([1, -1, 1, -1])
    tri = _drop_each(tets)  # (M, 4, 3)
    faces, inv3 = _unique_rows(tri.reshape(-1, 3))
    M, F = len(tets), len(faces)
    rows = inv3
    cols = np.repeat(np.arange(M), 4)
    vals = (tet_sign[:, None] * alt3[None, :]).reshape(-1)
    b3 = sp.csr_matrix((vals.astype(np.int32), (rows, cols)), shape=(F, M))
    b3.sort_indices()

    seg = _drop_each(faces)  # (F, 3, 2)
    edges, inv2 = _unique_rows(seg.reshape(-1, 2))
    E = len(edges)
    vals = np.tile(np.array([1, -1, 1], dtype=np.int32), F)
    b2 = sp.csr_matrix((vals, (inv2, np.repeat(np.arange(F), 3))), shape=(E, F))
    b2.sort_indices()

    N = len(mesh.points)
    vals = np.tile(np.array([-1, 1], dtype=np.int32), E)
    b1 = sp.csr_matrix((vals, (edges.reshape(-1), np.repeat(np.arange(E), 2))), shape=(N, E))
    b1.sort_indices()

    counts = np.diff(b3.indptr)
    if np.any(counts == 0) or np.any(counts > 2):
        raise MeshError("non-manifold mesh: a face has 0 or more than 2 incident tetrahedra")
    face_tets = np.full((F, 2), -1, dtype=np.int64)
    face_tets[:, 0] = b3.indices[b3.indptr[:-1]]
    two = counts == 2
    face_tets[two, 1] = b3.indices[b3.indptr[:-1][two] + 1]

    markers = np.zeros(F, dtype=np.int64)
    if len(mesh.faces):
        base = max(N, 1)
        fkeys = _row_keys(faces, base)
        rkeys = _row_keys(np.sort(mesh.faces, axis=1), base)
        pos = np.searchsorted(fkeys, rkeys)
        pos_c = np.minimum(pos, F - 1)
        missing = fkeys[pos_c] != rkeys
        if missing.any():
            bad = mesh.faces[np.flatnonzero(missing)[0]]
            raise MeshError(f"face record {tuple(bad)} is not a face of any tetrahedron")
        markers[pos] = mesh.face_markers
        flagged = markers != 0
        if np.any(flagged & two):
            raise MeshError("a face with a nonzero boundary marker has two incident tetrahedra")

    return SimplicialComplex(
        points=mesh.points,
        edges=edges,
        faces=faces,
        tets=tets,
        tet_sign=tet_sign,
        boundary={1: b1, 2: b2, 3: b3},
        face_markers=markers,
        face_tets=face_tets,
        tet_faces=inv3.reshape(M, 4),
        face_edges=inv2.reshape(F, 3),
        tet_record=order,
    )


def coboundary(complex_: SimplicialComplex, p: int) -> sp.csr_matrix:
    """Discrete exterior derivative on p-cochains: transpose of boundary[p+1]."""
    if p not in (0, 1, 2):
        raise ValueError(f"coboundary defined for p in 0..2, got {p}")
    return complex_.boundary[p + 1].T.tocsr()


def non_boundary_faces(complex_: SimplicialComplex) -> np.ndarray:
    """Faces shared by exactly two tetrahedra."""
    return np.flatnonzero(complex_.face_tets[:, 1] >= 0)
