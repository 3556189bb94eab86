import io

import meshio
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dec3d import build_complex, compute_geometry, generate_cube
from dec3d.mesh_io import (
    MeshError,
    RawMesh,
    parse_tetgen,
    read_csv_history,
    read_tetgen,
    sort_mesh,
    write_csv_histories,
    write_csv_history,
    write_obj,
    write_tetgen,
    write_vtk,
)
from dec3d.solver import Solution

from helpers import complex_geometry, random_cloud_mesh, single_tet


def _write(path, text):
    path.write_text(text)
    return path


SINGLE_NODE = """# four corners
4 3 0 0
1 0.0 0.0 0.0
2 1.0 0.0 0.0
3 0.0 1.0 0.0
4 0.0 0.0 1.0
"""
SINGLE_ELE = "1 4 0\n1 1 2 3 4\n"
SINGLE_FACE = "4 1\n1 2 3 4 1\n2 1 3 4 1\n3 1 2 4 1\n4 1 2 3 1\n"


def test_parse_single_tet(tmp_path):
    m = parse_tetgen(
        _write(tmp_path / "t.node", SINGLE_NODE), _write(tmp_path / "t.ele", SINGLE_ELE), _write(tmp_path / "t.face", SINGLE_FACE)
    )
    assert (len(m.points), len(m.tets), len(m.faces)) == (4, 1, 4)
    assert m.tets.tolist() == [[0, 1, 2, 3]]
    assert set(m.face_markers.tolist()) == {1}


def test_parse_zero_based(tmp_path):
    node = "4 3 0 0\n0 0 0 0\n1 1 0 0\n2 0 1 0\n3 0 0 1\n"
    ele = "1 4 0\n0 0 1 2 3\n"
    m = parse_tetgen(_write(tmp_path / "z.node", node), _write(tmp_path / "z.ele", ele))
    assert m.tets.tolist() == [[0, 1, 2, 3]]
    assert len(m.faces) == 0


@pytest.mark.parametrize(
    "node, ele, match",
    [
        ("5 3 0 0\n1 0 0 0\n2 1 0 0\n3 0 1 0\n4 0 0 1\n", SINGLE_ELE, "header"),
        (SINGLE_NODE, "1 4 0\n1 1 2 3 9\n", "does not exist"),
        ("4 3 0 0\n1 0 0 0\n1 1 0 0\n3 0 1 0\n4 0 0 1\n", SINGLE_ELE, "duplicate"),
        (SINGLE_NODE, "1 4 0\n1 1 2 2 4\n", "repeated"),
    ],
)
def test_parse_errors(tmp_path, node, ele, match):
    with pytest.raises(MeshError, match=match):
        parse_tetgen(_write(tmp_path / "e.node", node), _write(tmp_path / "e.ele", ele))


def test_missing_file(tmp_path):
    with pytest.raises(MeshError, match="missing"):
        read_tetgen(tmp_path / "nothing")


def test_hundred_node_mesh_round_trip(tmp_path):
    m = random_cloud_mesh(100, seed=7)
    write_tetgen(m, tmp_path / "hundred")
    back = read_tetgen(tmp_path / "hundred")
    assert len(back.points) == 100
    assert back == m


@pytest.mark.parametrize("n", [1, 2, 3])
@pytest.mark.parametrize("base", [0, 1])
def test_cube_round_trip(tmp_path, n, base):
    m = generate_cube(n)
    write_tetgen(m, tmp_path / "cube", base=base)
    assert read_tetgen(tmp_path / "cube") == m


def test_sort_idempotent_and_volume_preserving():
    m = random_cloud_mesh(80, seed=1)
    s = sort_mesh(m)
    assert sort_mesh(s) == s
    assert abs(s.tet_volumes().sum() - m.tet_volumes().sum()) < 1e-12
    key = s.points
    order = np.lexsort((key[:, 2], key[:, 1], key[:, 0]))
    assert np.array_equal(order, np.arange(len(key)))


def test_generated_cube_is_already_sorted():
    m = generate_cube(2)
    assert np.array_equal(sort_mesh(m).points, m.points)


def _relabel(m: RawMesh, perm: np.ndarray) -> RawMesh:
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    return RawMesh(m.points[perm], inv[m.tets], inv[m.faces], m.face_markers)


def test_sort_undoes_reverse_order():
    m = generate_cube(2)
    rev = _relabel(m, np.arange(len(m.points))[::-1].copy())
    a, b = build_complex(sort_mesh(rev)), build_complex(m)
    assert np.array_equal(a.points, b.points)
    for p in (1, 2, 3):
        assert (a.boundary[p] != b.boundary[p]).nnz == 0
    assert np.array_equal(a.face_markers, b.face_markers)


@settings(max_examples=15, deadline=None)
@given(st.randoms(use_true_random=False))
def test_sort_is_permutation_invariant(rnd):
    m = random_cloud_mesh(40, seed=2)
    perm = np.array(rnd.sample(range(40), 40))
    a, b = build_complex(sort_mesh(_relabel(m, perm))), build_complex(sort_mesh(m))
    assert np.array_equal(a.points, b.points)
    assert np.array_equal(a.tets, b.tets)
    assert (a.boundary[3] != b.boundary[3]).nnz == 0


def _overlap(points, n_ranks):
    blocks = np.array_split(np.arange(len(points)), n_ranks)
    boxes = [(points[b].min(0), points[b].max(0)) for b in blocks]
    total = 0.0
    for i in range(n_ranks):
        for j in range(i + 1, n_ranks):
            lo = np.maximum(boxes[i][0], boxes[j][0])
            hi = np.minimum(boxes[i][1], boxes[j][1])
            total += np.prod(np.clip(hi - lo, 0, None))
    return total


def test_sorted_blocks_are_spatially_compact():
    m = random_cloud_mesh(400, seed=4)
    shuffled = _relabel(m, np.random.default_rng(0).permutation(400))
    assert _overlap(sort_mesh(shuffled).points, 4) < 0.5 * _overlap(shuffled.points, 4)


def _solution(omega, alpha):
    return Solution(np.asarray(omega, float), np.asarray(alpha, float), 0.0, 0, True)


def test_vtk_single_tet(tmp_path):
    cx = build_complex(single_tet())
    geo = compute_geometry(cx)
    path = write_vtk(cx, geo, _solution(np.zeros(4), [0.5]), tmp_path / "one.vtk")
    text = path.read_text()
    assert text.startswith("# vtk DataFile Version 2.0")
    assert "CELLS 1 5" in text and "CELL_DATA 1" in text
    back = meshio.read(path)
    assert back.cells_dict["tetra"].shape == (1, 4)
    assert back.cell_data["temperature"][0].ravel().tolist() == [0.5]


def test_vtk_read_by_independent_parser(tmp_path):
    cx, geo = complex_geometry("kuhn2")
    rng = np.random.default_rng(0)
    sol = _solution(rng.normal(size=cx.n_faces), rng.normal(size=cx.n_tets))
    back = meshio.read(write_vtk(cx, geo, sol, tmp_path / "c.vtk"))
    assert len(back.points) == cx.n_nodes
    assert np.array_equal(back.cells_dict["tetra"], cx.tets)
    assert np.array_equal(back.cell_data["temperature"][0].ravel(), sol.alpha)
    assert back.cell_data["flux"][0].shape == (cx.n_tets, 3)


def _obj(path):
    verts, faces = [], []
    for line in path.read_text().splitlines():
        if line.startswith("v "):
            verts.append([float(x) for x in line.split()[1:]])
        elif line.startswith("f "):
            faces.append([int(x) for x in line.split()[1:]])
    return np.array(verts), faces


def test_obj_single_tet(tmp_path):
    cx = build_complex(single_tet())
    geo = compute_geometry(cx)
    v, f = _obj(write_obj(cx, geo, "primal", tmp_path / "p.obj"))
    assert v.shape == (4, 3) and len(f) == 4 and all(len(x) == 3 for x in f)
    v, f = _obj(write_obj(cx, geo, "dual", tmp_path / "d.obj"))
    centers = np.vstack([geo.circumcenters[p] for p in (3, 2, 1)])
    assert np.allclose(v, centers)
    assert len(f) == cx.n_edges
    # every polygon of a single tet passes through its circumcenter (vertex 1)
    assert all(1 in poly for poly in f)


def test_obj_cube_dual_indices_in_range(tmp_path):
    cx, geo = complex_geometry("kuhn2")
    v, f = _obj(write_obj(cx, geo, "dual", tmp_path / "d.obj"))
    assert len(f) == cx.n_edges
    assert all(1 <= i <= len(v) for poly in f for i in poly)
    assert all(len(poly) >= 3 for poly in f)


def test_obj_rejects_unknown_kind(tmp_path):
    cx, geo = complex_geometry("kuhn1")
    with pytest.raises(ValueError):
        write_obj(cx, geo, "both", tmp_path / "x.obj")


class _History:
    def __init__(self, cracked, kappas, n=10, seed=None):
        self.cracked, self.kappas, self.n, self.seed = cracked, kappas, n, seed

    def rows(self):
        for k, ke in enumerate(self.kappas):
            yield k, (self.cracked[k - 1] if k else None), k / self.n, ke

    def meta_line(self):
        return f"# test seed={self.seed}"


def test_csv_pristine_row(tmp_path):
    rows = read_csv_history(write_csv_history(_History([], [1.0]), tmp_path / "h.csv"))
    assert rows == [{"step": 0, "cracked_face_id": None, "D_n": 0.0, "kappa_e": 1.0}]


def test_csv_three_steps(tmp_path):
    path = write_csv_history(_History([4, 9, 2], [1.0, 0.9, 0.8, 0.5], n=10), tmp_path / "h.csv")
    lines = path.read_text().splitlines()
    assert lines[0].startswith("#") and lines[1] == "step,cracked_face_id,D_n,kappa_e"
    rows = read_csv_history(path)
    assert [r["cracked_face_id"] for r in rows] == [None, 4, 9, 2]
    assert np.allclose(np.diff([r["D_n"] for r in rows]), 0.1)


def test_csv_aggregate_has_path_column(tmp_path):
    hs = [_History([1], [1.0, 0.5], seed=0), _History([2, 3], [1.0, 0.7, 0.1], seed=1)]
    rows = read_csv_history(write_csv_histories(hs, tmp_path / "mc.csv"))
    assert [r["path"] for r in rows] == [0, 0, 1, 1, 1]
