"""Circumcentric dual geometry and diagonal Hodge stars."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .complex import SimplicialComplex

DEFAULT_LIMITER = 1e-8


class DegenerateMeshError(ValueError):
    pass


def circumcenter(vertices) -> np.ndarray:
    """Circumcenter of a single simplex given as (k+1, 3) vertex coordinates."""
    c, ok = circumcenters(np.asarray(vertices, dtype=float)[None])
    if not ok[0]:
        raise DegenerateMeshError("degenerate simplex has no unique circumcenter")
    return c[0]


def circumcenters(P: np.ndarray):
    """Batched circumcenters of (n, k+1, 3) simplices inside their affine hulls.

    Solves the Gram system ``G a = diag(G)/2`` for the edge-vector coefficients.
    Returns the centers and a mask of non-degenerate simplices; degenerate ones
    get a least-squares center.
    """
    P = np.asarray(P, dtype=float)
    n, k1, _ = P.shape
    if k1 == 1:
        return P[:, 0].copy(), np.ones(n, dtype=bool)
    E = P[:, 1:] - P[:, :1]  # (n, k, 3)
    G = np.einsum("nid,njd->nij", E, E)
    rhs = 0.5 * np.einsum("nii->ni", G)
    scale = np.einsum("nii->n", G)
    det = np.linalg.det(G)
    k = k1 - 1
    ok = np.abs(det) > 1e-13 * np.maximum(scale, 1e-300) ** k
    a = np.zeros((n, k))
    if ok.any():
        a[ok] = np.linalg.solve(G[ok], rhs[ok][..., None])[..., 0]
    for i in np.flatnonzero(~ok):
        a[i] = np.linalg.lstsq(G[i], rhs[i], rcond=None)[0]
    return P[:, 0] + np.einsum("ni,nid->nd", a, E), ok


@dataclass
class DualGeometry:
    """Per-cell circumcenters, primal/dual volumes and Hodge-star diagonals.

    ``dual_length`` is the raw signed dual edge length of each face; the
    limited value enters ``hodge[2]`` only.
    """

    circumcenters: dict
    primal_volume: dict
    dual_volume: dict
    hodge: dict
    limiter: float
    limited: np.ndarray = field(repr=False)  # faces whose dual length was clamped
    degenerate: dict = field(default_factory=dict, repr=False)

    @property
    def dual_length(self) -> np.ndarray:
        return self.dual_volume[2]

    @property
    def face_area(self) -> np.ndarray:
        return self.primal_volume[2]

    @property
    def tet_volume(self) -> np.ndarray:
        return self.primal_volume[3]

    def limited_fraction(self) -> float:
        return float(self.limited.mean()) if self.limited.size else 0.0


def _side_sign(c_hi, c_lo, opposite):
    """+1 when the higher circumcenter sits on the same side as the opposite vertex."""
    d = np.einsum("...d,...d->...", c_hi - c_lo, opposite - c_lo)
    return np.where(d >= 0, 1.0, -1.0)


def dual_volumes(complex_: SimplicialComplex, centers: dict) -> dict:
    """Signed circumcentric dual volumes for p = 0..3.

    Every flag v < e < f < t of a tetrahedron contributes the orthogonal
    simplex spanned by the chain of circumcenters, signed by whether each
    higher circumcenter lies on the cell side of the lower simplex.
    """
    P = complex_.points
    tets, faces, edges = complex_.tets, complex_.faces, complex_.edges
    M = complex_.n_tets
    ct, cf, ce = centers[3], centers[2], centers[1]

    tf = complex_.tet_faces  # (M, 4)
    # face slot i drops local vertex i, which is the opposite vertex
    opp_t = P[tets]  # (M, 4, 3)
    l_ft = np.linalg.norm(ct[:, None] - cf[tf], axis=-1)
    s_ft = _side_sign(ct[:, None], cf[tf], opp_t)
    d2 = np.bincount(tf.ravel(), weights=(s_ft * l_ft).ravel(), minlength=complex_.n_faces)

    fe = complex_.face_edges[tf]  # (M, 4, 3)
    fv = faces[tf]  # (M, 4, 3) vertex opposite edge slot j
    l_ef = np.linalg.norm(cf[tf][:, :, None] - ce[fe], axis=-1)
    s_ef = _side_sign(cf[tf][:, :, None], ce[fe], P[fv])
    w_eft = s_ef * l_ef * (s_ft * l_ft)[:, :, None]
    d1 = np.bincount(fe.ravel(), weights=(w_eft / 2.0).ravel(), minlength=complex_.n_edges)

    ev = edges[fe]  # (M, 4, 3, 2)
    l_ve = np.linalg.norm(ce[fe][..., None, :] - P[ev], axis=-1)  # (M, 4, 3, 2)
    w = l_ve * w_eft[..., None] / 6.0
    d0 = np.bincount(ev.ravel(), weights=w.ravel(), minlength=complex_.n_nodes)

    return {0: d0, 1: d1, 2: d2, 3: np.ones(M)}


def primal_volumes(complex_: SimplicialComplex) -> dict:
    P = complex_.points
    e = P[complex_.edges]
    f = P[complex_.faces]
    t = P[complex_.tets]
    vol3 = np.einsum("ij,ij->i", t[:, 1] - t[:, 0], np.cross(t[:, 2] - t[:, 0], t[:, 3] - t[:, 0])) / 6.0
    return {
        0: np.ones(complex_.n_nodes),
        1: np.linalg.norm(e[:, 1] - e[:, 0], axis=1),
        2: 0.5 * np.linalg.norm(np.cross(f[:, 1] - f[:, 0], f[:, 2] - f[:, 0]), axis=1),
        3: np.abs(vol3),
    }


def compute_geometry(complex_: SimplicialComplex, limiter: float = DEFAULT_LIMITER) -> DualGeometry:
    P = complex_.points
    centers, degenerate = {0: P.copy()}, {}
    for p in (1, 2, 3):
        centers[p], ok = circumcenters(P[complex_.cells(p)])
        degenerate[p] = ~ok
    prim = primal_volumes(complex_)
    dual = dual_volumes(complex_, centers)
    if np.any(prim[3] <= 0) or degenerate[3].any():
        raise DegenerateMeshError("mesh contains a tetrahedron with zero volume")
    geo = DualGeometry(centers, prim, dual, {}, limiter, np.zeros(complex_.n_faces, dtype=bool), degenerate)
    for p in range(4):
        geo.hodge[p] = hodge_star(complex_, geo, p, limiter)
    geo.limited = dual[2] < limiter
    return geo


def hodge_star(complex_: SimplicialComplex, geometry: DualGeometry, p: int, limiter: float = DEFAULT_LIMITER) -> np.ndarray:
    """Diagonal of the p-th Hodge star, dual volume over primal volume.

    For p = 2 the dual edge length is clamped to at least ``limiter`` (negative
    lengths included) before dividing by the face area.
    """
    prim = geometry.primal_volume[p]
    if np.any(prim <= 0):
        raise DegenerateMeshError(f"zero primal volume among {p}-cells")
    dual = geometry.dual_volume[p]
    if p == 2:
        dual = np.maximum(dual, limiter)
    return dual / prim


def barycentric_gradients(complex_: SimplicialComplex) -> np.ndarray:
    """(M, 4, 3) gradients of the barycentric coordinates of each tetrahedron."""
    t = complex_.points[complex_.tets]
    J = np.stack([t[:, 1] - t[:, 0], t[:, 2] - t[:, 0], t[:, 3] - t[:, 0]], axis=2)  # columns
    Jinv = np.linalg.inv(J)
    g = np.empty((len(t), 4, 3))
    g[:, 1:] = Jinv
    g[:, 0] = -Jinv.sum(axis=1)
    return g


_FACE_SLOTS = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])


def whitney_vector(complex_: SimplicialComplex, geometry: DualGeometry, omega, at=None) -> np.ndarray:
    """Vector proxy of the face cochain ``omega`` at each tetrahedron's barycenter.

    ``omega[f]`` is the integral over face f with its normal taken by the
    right-hand rule on the sorted face vertices; the Whitney 2-form of face
    (a, b, c) is ``2 (l_a grad l_b x grad l_c + cyclic)``.  ``at`` optionally
    gives barycentric coordinates (M, 4) of the evaluation point.
    """
    omega = np.asarray(omega, dtype=float)
    if omega.shape != (complex_.n_faces,):
        raise ValueError("omega must hold one value per face")
    g = barycentric_gradients(complex_)
    lam = np.full((complex_.n_tets, 4), 0.25) if at is None else np.asarray(at, dtype=float)
    out = np.zeros((complex_.n_tets, 3))
    for i, (a, b, c) in enumerate(_FACE_SLOTS):
        w = 2.0 * (
            lam[:, a, None] * np.cross(g[:, b], g[:, c])
            + lam[:, b, None] * np.cross(g[:, c], g[:, a])
            + lam[:, c, None] * np.cross(g[:, a], g[:, b])
        )
        out += omega[complex_.tet_faces[:, i], None] * w
    return out
