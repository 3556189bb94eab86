"""TetGen mesh I/O, spatial pre-sorting and VTK / OBJ / CSV export."""
from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class MeshError(ValueError):
    """Raised for malformed or inconsistent mesh input."""


@dataclass
class RawMesh:
    """Plain tetrahedral mesh with 0-based node references.

    ``face_markers`` follows the TetGen convention: 0 marks an interior face,
    any other integer names a boundary patch.
    """

    points: np.ndarray  # (N, 3) float
    tets: np.ndarray  # (M, 4) int
    faces: np.ndarray  # (F, 3) int
    face_markers: np.ndarray  # (F,) int
    tet_attributes: Optional[np.ndarray] = None
    edges: Optional[np.ndarray] = None
    edge_markers: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.tets = np.asarray(self.tets, dtype=np.int64).reshape(-1, 4)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        self.face_markers = np.asarray(self.face_markers, dtype=np.int64).reshape(-1)
        if len(self.face_markers) != len(self.faces):
            raise MeshError("face marker count does not match face count")
        self.validate()

    @property
    def n_nodes(self) -> int:
        return len(self.points)

    def validate(self):
        n = len(self.points)
        for name, arr in (("tet", self.tets), ("face", self.faces), ("edge", self.edges)):
            if arr is None or arr.size == 0:
                continue
            if arr.min() < 0 or arr.max() >= n:
                raise MeshError(f"{name} record references a node that does not exist")
        if len(self.tets):
            s = np.sort(self.tets, axis=1)
            if np.any(s[:, 1:] == s[:, :-1]):
                raise MeshError("tetrahedron with repeated node indices")

    def tet_volumes(self) -> np.ndarray:
        p = self.points[self.tets]
        return np.abs(signed_tet_volumes(p))

    def __eq__(self, other):
        if not isinstance(other, RawMesh):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and np.array_equal(a, b)

        return all(
            same(getattr(self, k), getattr(other, k))
            for k in ("points", "tets", "faces", "face_markers", "tet_attributes", "edges", "edge_markers")
        )


def signed_tet_volumes(p: np.ndarray) -> np.ndarray:
    """Signed volumes for an (M, 4, 3) array of tetrahedron vertices."""
    a = p[:, 1] - p[:, 0]
    b = p[:, 2] - p[:, 0]
    c = p[:, 3] - p[:, 0]
    return np.einsum("ij,ij->i", a, np.cross(b, c)) / 6.0


# --------------------------------------------------------------------------
# TetGen text formats
# --------------------------------------------------------------------------

def _records(path: Path) -> list[list[str]]:
    if not path.exists():
        raise MeshError(f"missing mesh file: {path}")
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                rows.append(line.split())
    if not rows:
        raise MeshError(f"empty mesh file: {path}")
    return rows


def _body(path: Path, rows: list[list[str]], count: int, min_cols: int) -> list[list[str]]:
    body = rows[1:]
    if len(body) != count:
        raise MeshError(f"{path.name}: header announces {count} records, found {len(body)}")
    ids = []
    for r in body:
        if len(r) < min_cols:
            raise MeshError(f"{path.name}: short record {' '.join(r)!r}")
        ids.append(int(r[0]))
    if len(set(ids)) != len(ids):
        raise MeshError(f"{path.name}: duplicate record index")
    return body


def parse_tetgen(node_path, ele_path, face_path=None, edge_path=None) -> RawMesh:
    """Read TetGen ``.node``/``.ele``/``.face`` (and optional ``.edge``) files.

    Indexing base (0 or 1) is taken from the first record of the ``.node`` file
    and applied to node references in the other files.
    """
    node_path, ele_path = Path(node_path), Path(ele_path)

    rows = _records(node_path)
    n_nodes, dim = int(rows[0][0]), int(rows[0][1]) if len(rows[0]) > 1 else 3
    if dim != 3:
        raise MeshError(f"{node_path.name}: only 3D meshes are supported (dim={dim})")
    body = _body(node_path, rows, n_nodes, 4)
    base = int(body[0][0]) if body else 0
    ids = np.array([int(r[0]) for r in body], dtype=np.int64)
    order = np.argsort(ids, kind="stable")
    points = np.array([[float(v) for v in r[1:4]] for r in body], dtype=float)[order]
    ids = ids[order]
    if len(ids) and not np.array_equal(ids, np.arange(base, base + n_nodes)):
        raise MeshError(f"{node_path.name}: node indices are not contiguous from {base}")

    rows = _records(ele_path)
    n_tets, per_tet = int(rows[0][0]), int(rows[0][1])
    has_attr = len(rows[0]) > 2 and int(rows[0][2]) > 0
    if per_tet not in (4, 10):
        raise MeshError(f"{ele_path.name}: unsupported nodes per tetrahedron {per_tet}")
    body = _body(ele_path, rows, n_tets, 1 + per_tet)
    body.sort(key=lambda r: int(r[0]))
    tets = np.array([[int(v) for v in r[1:5]] for r in body], dtype=np.int64).reshape(-1, 4) - base
    attrs = None
    if has_attr:
        attrs = np.array([float(r[1 + per_tet]) for r in body], dtype=float)

    faces = np.zeros((0, 3), dtype=np.int64)
    markers = np.zeros(0, dtype=np.int64)
    if face_path is not None:
        face_path = Path(face_path)
        rows = _records(face_path)
        n_faces = int(rows[0][0])
        has_marker = len(rows[0]) > 1 and int(rows[0][1]) > 0
        body = _body(face_path, rows, n_faces, 4)
        body.sort(key=lambda r: int(r[0]))
        faces = np.array([[int(v) for v in r[1:4]] for r in body], dtype=np.int64).reshape(-1, 3) - base
        if has_marker:
            markers = np.array([int(r[4]) if len(r) > 4 else 0 for r in body], dtype=np.int64)
        else:
            markers = np.zeros(len(faces), dtype=np.int64)

    edges = edge_markers = None
    if edge_path is not None and Path(edge_path).exists():
        edge_path = Path(edge_path)
        rows = _records(edge_path)
        n_edges = int(rows[0][0])
        has_marker = len(rows[0]) > 1 and int(rows[0][1]) > 0
        body = _body(edge_path, rows, n_edges, 3)
        body.sort(key=lambda r: int(r[0]))
        edges = np.array([[int(v) for v in r[1:3]] for r in body], dtype=np.int64).reshape(-1, 2) - base
        if has_marker:
            edge_markers = np.array([int(r[3]) if len(r) > 3 else 0 for r in body], dtype=np.int64)

    return RawMesh(points, tets, faces, markers, tet_attributes=attrs, edges=edges, edge_markers=edge_markers)


def read_tetgen(prefix) -> RawMesh:
    """Read ``prefix.node``, ``prefix.ele``, ``prefix.face`` (and ``.edge`` if present)."""
    prefix = str(prefix)
    face = prefix + ".face"
    return parse_tetgen(
        prefix + ".node",
        prefix + ".ele",
        face if os.path.exists(face) else None,
        prefix + ".edge",
    )


def write_tetgen(mesh: RawMesh, prefix, base: int = 1) -> list[Path]:
    """Write the mesh as TetGen text files; coordinates use round-trip precision."""
    prefix = str(prefix)
    Path(prefix).parent.mkdir(parents=True, exist_ok=True)
    out = []

    p = Path(prefix + ".node")
    with open(p, "w") as fh:
        fh.write(f"{mesh.n_nodes} 3 0 0\n")
        for i, (x, y, z) in enumerate(mesh.points.tolist()):
            fh.write(f"{i + base} {x!r} {y!r} {z!r}\n")
    out.append(p)

    p = Path(prefix + ".ele")
    has_attr = mesh.tet_attributes is not None
    with open(p, "w") as fh:
        fh.write(f"{len(mesh.tets)} 4 {int(has_attr)}\n")
        for i, t in enumerate(mesh.tets):
            line = f"{i + base} " + " ".join(str(v + base) for v in t)
            if has_attr:
                line += f" {float(mesh.tet_attributes[i])!r}"
            fh.write(line + "\n")
    out.append(p)

    p = Path(prefix + ".face")
    with open(p, "w") as fh:
        fh.write(f"{len(mesh.faces)} 1\n")
        for i, (f, m) in enumerate(zip(mesh.faces, mesh.face_markers)):
            fh.write(f"{i + base} " + " ".join(str(v + base) for v in f) + f" {m}\n")
    out.append(p)

    if mesh.edges is not None:
        p = Path(prefix + ".edge")
        has_marker = mesh.edge_markers is not None
        with open(p, "w") as fh:
            fh.write(f"{len(mesh.edges)} {int(has_marker)}\n")
            for i, e in enumerate(mesh.edges):
                line = f"{i + base} {e[0] + base} {e[1] + base}"
                if has_marker:
                    line += f" {mesh.edge_markers[i]}"
                fh.write(line + "\n")
        out.append(p)
    return out


# --------------------------------------------------------------------------
# spatial pre-sort
# --------------------------------------------------------------------------

def sort_mesh(mesh: RawMesh) -> RawMesh:
    """Renumber nodes so that z varies fastest, then y, then x.

    Tetrahedron, face and edge records are relabelled and then ordered by their
    sorted node tuples, so sequential index blocks are spatially compact.
    Vertex order inside each record is kept (orientation is preserved).
    """
    x, y, z = mesh.points.T
    perm = np.lexsort((z, y, x))  # new -> old
    new_of_old = np.empty_like(perm)
    new_of_old[perm] = np.arange(len(perm))

    def relabel(cells, *extras):
        if cells is None:
            return (None,) + extras
        cells = new_of_old[cells]
        key = np.sort(cells, axis=1)
        order = np.lexsort(key.T[::-1]) if len(cells) else np.zeros(0, dtype=np.int64)
        return (cells[order],) + tuple(None if e is None else e[order] for e in extras)

    tets, attrs = relabel(mesh.tets, mesh.tet_attributes)
    faces, markers = relabel(mesh.faces, mesh.face_markers)
    edges, emarkers = relabel(mesh.edges, mesh.edge_markers)
    return RawMesh(mesh.points[perm], tets, faces, markers, tet_attributes=attrs, edges=edges, edge_markers=emarkers)


# --------------------------------------------------------------------------
# visualisation / post-processing output
# --------------------------------------------------------------------------

def write_vtk(complex_, geometry, solution, path, precision: int = 17) -> Path:
    """Legacy ASCII VTK unstructured grid with per-tet temperature and flux vector."""
    from .geometry import whitney_vector

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pts = complex_.points
    tets = complex_.tets
    alpha = np.asarray(solution.alpha, dtype=float)
    vec = whitney_vector(complex_, geometry, solution.omega)
    fmt = f"%.{precision}g"

    buf = io.StringIO()
    buf.write("# vtk DataFile Version 2.0\n")
    buf.write("dec3d solution\nASCII\nDATASET UNSTRUCTURED_GRID\n")
    buf.write(f"POINTS {len(pts)} double\n")
    np.savetxt(buf, pts, fmt=fmt)
    buf.write(f"CELLS {len(tets)} {5 * len(tets)}\n")
    np.savetxt(buf, np.column_stack([np.full(len(tets), 4), tets]), fmt="%d")
    buf.write(f"CELL_TYPES {len(tets)}\n")
    np.savetxt(buf, np.full(len(tets), 10), fmt="%d")
    buf.write(f"CELL_DATA {len(tets)}\n")
    buf.write("SCALARS temperature double 1\nLOOKUP_TABLE default\n")
    np.savetxt(buf, alpha, fmt=fmt)
    buf.write("VECTORS flux double\n")
    np.savetxt(buf, vec, fmt=fmt)
    path.write_text(buf.getvalue())
    return path


def write_obj(complex_, geometry, which: str, path) -> Path:
    """Wavefront OBJ of the primal triangles or the circumcentric dual polygons."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if which == "primal":
        verts = complex_.points
        polys = [tuple(f) for f in complex_.faces]
    elif which == "dual":
        verts, polys = dual_polygons(complex_, geometry)
    else:
        raise ValueError(f"which must be 'primal' or 'dual', got {which!r}")

    buf = io.StringIO()
    buf.write(f"# dec3d {which} mesh\n")
    for v in verts:
        buf.write("v {!r} {!r} {!r}\n".format(*map(float, v)))
    for poly in polys:
        buf.write("f " + " ".join(str(int(i) + 1) for i in poly) + "\n")
    path.write_text(buf.getvalue())
    return path


def dual_polygons(complex_, geometry):
    """Dual 2-cells (one per primal edge) as polygons over circumcenter vertices.

    Vertex array layout: tet circumcenters, then face circumcenters, then edge
    circumcenters.  Boundary edges get an open fan closed through the two
    boundary-face circumcenters and the edge midpoint.
    """
    nt, nf = complex_.n_tets, complex_.n_faces
    verts = np.vstack([geometry.circumcenters[3], geometry.circumcenters[2], geometry.circumcenters[1]])
    tet_of_face = complex_.face_tets  # (nf, 2), -1 padded
    polys = []
    e2f = complex_.boundary[2].tocsr()  # edges x faces
    for e in range(complex_.n_edges):
        efaces = list(e2f.indices[e2f.indptr[e]:e2f.indptr[e + 1]])
        # walk tet -> face -> tet around the edge
        adj = {}
        for f in efaces:
            for t in tet_of_face[f]:
                if t >= 0:
                    adj.setdefault(int(t), []).append(int(f))
        bfaces = [f for f in efaces if tet_of_face[f][1] < 0]
        start_face = bfaces[0] if bfaces else efaces[0]
        ring = []
        f = start_face
        t = int(tet_of_face[f][0])
        if bfaces:
            ring.append(nt + f)
        seen = set()
        while t >= 0 and t not in seen:
            seen.add(t)
            ring.append(t)
            nxt = [g for g in adj[t] if g != f]
            if not nxt:
                break
            f = nxt[0]
            a, b = tet_of_face[f]
            t = int(b if a == t else a)
        if bfaces:
            ring.append(nt + f)
            ring.append(nt + nf + e)
        polys.append(tuple(ring))
    return verts, polys


HISTORY_COLUMNS = ("step", "cracked_face_id", "D_n", "kappa_e")


def write_csv_history(crack_state, path, path_index: Optional[int] = None) -> Path:
    """One row per cracking step; step 0 is the pristine solve.

    A leading ``#`` line records the mode, RNG algorithm and seed.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        _write_history_rows(fh, [crack_state], header_paths=path_index is not None, first_index=path_index or 0)
    return path


def write_csv_histories(states: Sequence, path) -> Path:
    """Aggregate CSV for a set of Monte Carlo paths, merged by path index."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        _write_history_rows(fh, states, header_paths=True)
    return path


def _write_history_rows(fh, states, header_paths: bool, first_index: int = 0):
    meta = states[0].meta_line() if states else "# empty"
    fh.write(meta + "\n")
    w = csv.writer(fh, lineterminator="\n")
    cols = (("path",) if header_paths else ()) + HISTORY_COLUMNS
    w.writerow(cols)
    for k, st in enumerate(states):
        for row in st.rows():
            step, face, dn, ke = row
            rec = [str(step), "" if face is None else str(face), repr(float(dn)), repr(float(ke))]
            if header_paths:
                rec.insert(0, str(first_index + k))
            w.writerow(rec)


def read_csv_history(path) -> list[dict]:
    """Parse a history CSV, skipping ``#`` comment lines."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    out = []
    for rec in csv.DictReader(lines):
        row = {
            "step": int(rec["step"]),
            "cracked_face_id": None if rec["cracked_face_id"] == "" else int(rec["cracked_face_id"]),
            "D_n": float(rec["D_n"]),
            "kappa_e": float(rec["kappa_e"]),
        }
        if "path" in rec:
            row["path"] = int(rec["path"])
        out.append(row)
    return out


def generate_cube(n: int) -> RawMesh:
    """Kuhn-subdivided unit cube; see :func:`dec3d.generators.generate_cube`."""
    from .generators import generate_cube as _gen

    return _gen(n)
