"""Mixed flux/potential saddle-point system and its boundary/crack surgery.

Unknowns are ordered ``[omega (one per face), alpha (one per tet)]``.  The
system matrix keeps the fixed block pattern ``[[A, B], [B^T, 0]]`` with
``A = diag(hodge2 / kappa)`` and ``B = boundary[3]``; Neumann faces and cracks
are imposed by overwriting stored values, never by changing the pattern.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .complex import SimplicialComplex
from .geometry import DualGeometry


class AssemblyError(ValueError):
    pass


@dataclass
class Conductivity:
    kappa: np.ndarray  # per face
    cracked: np.ndarray  # per face, bool

    @classmethod
    def uniform(cls, n_faces: int, kappa: float = 1.0) -> "Conductivity":
        return cls(np.full(n_faces, float(kappa)), np.zeros(n_faces, dtype=bool))

    def copy(self) -> "Conductivity":
        return Conductivity(self.kappa.copy(), self.cracked.copy())


@dataclass(eq=False)
class SaddleSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    n_faces: int
    n_tets: int
    face_tets: np.ndarray
    face_area: np.ndarray
    is_boundary: np.ndarray
    conductivity: Conductivity
    eliminated: dict = field(default_factory=dict)  # face -> prescribed omega
    dirichlet: dict = field(default_factory=dict)  # face -> T0
    journal: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.n_faces + self.n_tets

    @property
    def A_diag(self) -> np.ndarray:
        return self.matrix.diagonal()[: self.n_faces]

    @property
    def B(self) -> sp.csr_matrix:
        return self.matrix[: self.n_faces, self.n_faces:]

    @property
    def active(self) -> np.ndarray:
        mask = np.ones(self.n_faces, dtype=bool)
        if self.eliminated:
            mask[list(self.eliminated)] = False
        return mask

    def split(self, x):
        x = np.asarray(x)
        return x[: self.n_faces], x[self.n_faces:]

    def copy(self) -> "SaddleSystem":
        return SaddleSystem(
            self.matrix.copy(),
            self.rhs.copy(),
            self.n_faces,
            self.n_tets,
            self.face_tets,
            self.face_area,
            self.is_boundary,
            self.conductivity.copy(),
            dict(self.eliminated),
            dict(self.dirichlet),
            list(self.journal),
        )

    # -- stored-value addressing --------------------------------------------

    def _pos(self, i: int, j: int) -> int:
        m = self.matrix
        lo, hi = m.indptr[i], m.indptr[i + 1]
        k = lo + np.searchsorted(m.indices[lo:hi], j)
        if k >= hi or m.indices[k] != j:
            raise KeyError((i, j))
        return int(k)

    def face_positions(self, face: int) -> list:
        """Stored positions of the face's row and column (diagonal first)."""
        nf = self.n_faces
        pos = [self._pos(face, face)]
        for t in self.face_tets[face]:
            if t >= 0:
                pos.append(self._pos(face, nf + t))
                pos.append(self._pos(nf + t, face))
        return pos

    def undo(self):
        """Revert the most recent journalled mutation."""
        entry = self.journal.pop()
        self.matrix.data[entry["pos"]] = entry["old_vals"]
        self.rhs[entry["rhs_idx"]] = entry["old_rhs"]
        face = entry["face"]
        self.eliminated.pop(face, None)
        if entry.get("cracked"):
            self.conductivity.cracked[face] = False
        if entry.get("kappa") is not None:
            self.conductivity.kappa[face] = entry["kappa"]

    def reset(self, n_keep: int = 0):
        """Undo journal entries until only ``n_keep`` remain."""
        while len(self.journal) > n_keep:
            self.undo()


def assemble(complex_: SimplicialComplex, geometry: DualGeometry, conductivity: Optional[Conductivity] = None) -> SaddleSystem:
    """Build ``[[hodge2/kappa, B], [B^T, 0]]`` with a zero right-hand side."""
    nf, nt = complex_.n_faces, complex_.n_tets
    if conductivity is None:
        conductivity = Conductivity.uniform(nf)
    kappa = np.asarray(conductivity.kappa, dtype=float)
    if kappa.shape != (nf,):
        raise AssemblyError("conductivity must have one value per face")
    bad = (kappa <= 0) & ~conductivity.cracked
    if bad.any():
        raise AssemblyError(f"non-positive conductivity on uncracked face {int(np.flatnonzero(bad)[0])}")
    safe = np.where(conductivity.cracked, 1.0, kappa)
    a = geometry.hodge[2] / safe
    B = complex_.boundary[3].astype(float).tocoo()
    rows = np.concatenate([np.arange(nf), B.row, nf + B.col])
    cols = np.concatenate([np.arange(nf), nf + B.col, B.row])
    vals = np.concatenate([a, B.data, B.data])
    M = sp.csr_matrix((vals, (rows, cols)), shape=(nf + nt, nf + nt))
    M.sort_indices()
    system = SaddleSystem(
        matrix=M,
        rhs=np.zeros(nf + nt),
        n_faces=nf,
        n_tets=nt,
        face_tets=complex_.face_tets,
        face_area=geometry.face_area,
        is_boundary=complex_.is_boundary_face,
        conductivity=Conductivity(kappa.copy(), conductivity.cracked.copy()),
    )
    for f in np.flatnonzero(conductivity.cracked):
        crack_face(system, int(f))
    return system


def _incidence(system: SaddleSystem, face: int) -> list:
    """(tet, sign) pairs read from the current matrix."""
    nf = system.n_faces
    out = []
    for t in system.face_tets[face]:
        if t >= 0:
            out.append((int(t), system.matrix.data[system._pos(face, nf + t)]))
    return out


def apply_dirichlet(system: SaddleSystem, faces, T0) -> SaddleSystem:
    """Move the known boundary temperature of each face to the right-hand side.

    A boundary face's dual edge ends at the face itself; its missing endpoint
    value ``T0`` enters row f as ``+sign(B[f, t]) * T0``.
    """
    faces = np.atleast_1d(np.asarray(faces, dtype=np.int64))
    T0 = np.broadcast_to(np.asarray(T0, dtype=float), faces.shape)
    for f, val in zip(faces, T0):
        f = int(f)
        if not system.is_boundary[f]:
            raise AssemblyError(f"face {f} is not on the boundary")
        if f in system.eliminated:
            raise AssemblyError(f"face {f} already carries a flux condition")
        if f in system.dirichlet:
            raise AssemblyError(f"face {f} already carries a Dirichlet value")
        ((t, sign),) = _incidence(system, f)
        system.rhs[f] += sign * val
        system.dirichlet[f] = float(val)
    return system


def eliminate_face(system: SaddleSystem, face: int, value: float = 0.0, _cracked: bool = False) -> SaddleSystem:
    """Prescribe ``omega[face] = value`` by zeroing its row and column.

    The known flux is first moved into the balance rows of the adjacent
    tetrahedra; the diagonal becomes 1 and ``rhs[face] = value``.  At most five
    stored matrix values change.
    """
    face = int(face)
    if not 0 <= face < system.n_faces:
        raise AssemblyError(f"face {face} out of range")
    if face in system.eliminated:
        raise AssemblyError(f"face {face} already eliminated")
    if face in system.dirichlet:
        raise AssemblyError(f"face {face} carries a Dirichlet value")
    nf = system.n_faces
    pos = system.face_positions(face)
    rhs_idx = [face] + [nf + t for t, _ in _incidence(system, face)]
    entry = {
        "face": face,
        "pos": np.array(pos),
        "old_vals": system.matrix.data[pos].copy(),
        "rhs_idx": np.array(rhs_idx),
        "old_rhs": system.rhs[rhs_idx].copy(),
        "cracked": _cracked,
        "kappa": system.conductivity.kappa[face] if _cracked else None,
    }
    for t, sign in _incidence(system, face):
        system.rhs[nf + t] -= sign * value
    system.rhs[face] = value
    data = system.matrix.data
    data[pos[0]] = 1.0
    data[pos[1:]] = 0.0
    system.eliminated[face] = float(value)
    system.journal.append(entry)
    return system


def apply_neumann(system: SaddleSystem, faces, flux_density) -> SaddleSystem:
    """Impose outward heat-flux density ``q`` on boundary faces.

    The face unknown is oriented by its sorted-vertex normal and carries
    ``kappa grad T``, so the prescribed value is ``-sign(B[f, t]) q area``.
    """
    faces = np.atleast_1d(np.asarray(faces, dtype=np.int64))
    q = np.broadcast_to(np.asarray(flux_density, dtype=float), faces.shape)
    for f, qf in zip(faces, q):
        f = int(f)
        if not system.is_boundary[f]:
            raise AssemblyError(f"face {f} is not on the boundary")
        ((t, sign),) = _incidence(system, f)
        eliminate_face(system, f, -sign * qf * system.face_area[f])
    return system


def crack_face(system: SaddleSystem, face: int) -> SaddleSystem:
    """Turn an interior face into an insulating crack (zero flux)."""
    face = int(face)
    if system.is_boundary[face]:
        raise AssemblyError(f"face {face} is a boundary face and cannot crack")
    if face in system.eliminated:
        raise AssemblyError(f"face {face} is already cracked")
    eliminate_face(system, face, 0.0, _cracked=True)
    system.conductivity.cracked[face] = True
    system.conductivity.kappa[face] = 0.0
    return system


def floating_tets(system: SaddleSystem) -> np.ndarray:
    """Lowest tet of every connected cluster with no active Dirichlet face.

    Such clusters leave the temperature defined only up to a constant; the
    solver pins one temperature per cluster.
    """
    ft = system.face_tets
    ncomp, label = components(system)
    anchored = np.zeros(ncomp, dtype=bool)
    dfaces = np.array([f for f in system.dirichlet if f not in system.eliminated], dtype=np.int64)
    if len(dfaces):
        anchored[label[ft[dfaces, 0]]] = True
    first = np.full(ncomp, system.n_tets, dtype=np.int64)
    np.minimum.at(first, label, np.arange(system.n_tets))
    return np.sort(first[~anchored])


def components(system: SaddleSystem):
    """Connected clusters of tetrahedra through uncracked interior faces."""
    ft = system.face_tets
    inner = system.active & (ft[:, 1] >= 0)
    g = sp.coo_matrix((np.ones(inner.sum()), (ft[inner, 0], ft[inner, 1])), shape=(system.n_tets,) * 2)
    return connected_components(g, directed=False)
