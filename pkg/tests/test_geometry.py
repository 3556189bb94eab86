import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dec3d import build_complex, compute_geometry, whitney_vector
from dec3d.geometry import DegenerateMeshError, barycentric_gradients, circumcenter, circumcenters, hodge_star
from dec3d.mesh_io import RawMesh

from helpers import MESHES, REGULAR_TET, complex_geometry, hot_cold, single_tet


def test_segment_midpoint():
    assert np.allclose(circumcenter([[0, 0, 0], [2, 0, 0]]), [1, 0, 0])


def test_equilateral_triangle():
    c = circumcenter([[0, 0, 0], [1, 0, 0], [0.5, np.sqrt(3) / 2, 0]])
    assert np.allclose(c, [0.5, np.sqrt(3) / 6, 0], atol=1e-15)


coords = arrays(np.float64, (4, 3), elements=st.floats(-1, 1, allow_nan=False, width=64))


@settings(max_examples=60, deadline=None)
@given(coords)
def test_circumcenter_equidistant(P):
    E = P[1:] - P[0]
    vol = abs(np.linalg.det(E)) / 6
    diam = max(np.linalg.norm(P[i] - P[j]) for i in range(4) for j in range(i))
    if diam < 1e-3 or vol < 1e-3 * diam**3:
        return
    c = circumcenter(P)
    d = np.linalg.norm(P - c, axis=1)
    assert d.max() - d.min() < 1e-12 * max(diam, d.max())


def test_triangle_center_lies_in_plane():
    P = np.array([[[0.1, 0.2, 0.3], [1.0, 0.4, 0.0], [0.3, 0.9, 0.7]]])
    c, ok = circumcenters(P)
    n = np.cross(P[0, 1] - P[0, 0], P[0, 2] - P[0, 0])
    assert ok[0] and abs(np.dot(c[0] - P[0, 0], n)) < 1e-14
    assert np.ptp(np.linalg.norm(P[0] - c[0], axis=1)) < 1e-14


def test_degenerate_simplex_flagged():
    _, ok = circumcenters(np.array([[[0, 0, 0], [1, 0, 0], [2, 0, 0]]], dtype=float))
    assert not ok[0]
    with pytest.raises(DegenerateMeshError):
        circumcenter([[0, 0, 0], [1, 0, 0], [2, 0, 0]])


def test_regular_tet_face_duals():
    cx = build_complex(single_tet(REGULAR_TET))
    geo = compute_geometry(cx)
    c = geo.circumcenters[3][0]
    expected = [np.linalg.norm(c - cx.points[f].mean(axis=0)) for f in cx.faces]
    assert np.allclose(geo.dual_length, expected, rtol=1e-12)
    h2 = geo.hodge[2]
    assert np.all(h2 > 0) and np.ptp(h2) < 1e-12 * h2[0]


@pytest.mark.parametrize("name", sorted(MESHES))
def test_vertex_duals_tile_the_domain(name):
    cx, geo = complex_geometry(name)
    assert abs(geo.dual_volume[0].sum() - geo.tet_volume.sum()) < 1e-10


@pytest.mark.parametrize("name", sorted(MESHES))
@pytest.mark.parametrize("p", [1, 2])
def test_primal_dual_diamonds_tile_the_domain(name, p):
    cx, geo = complex_geometry(name)
    total = np.sum(geo.primal_volume[p] * geo.dual_volume[p]) / 3.0
    assert abs(total - geo.tet_volume.sum()) < 1e-10


def test_kuhn_has_zero_length_duals():
    cx, geo = complex_geometry("kuhn2")
    interior = ~cx.is_boundary_face
    assert np.any(np.abs(geo.dual_length[interior]) < 1e-12)
    assert geo.limited.sum() > 0


def test_limited_count_drops_on_quality_mesh():
    _, kuhn = complex_geometry("kuhn3")
    _, jit = complex_geometry("jittered3")
    assert jit.limited.sum() < kuhn.limited.sum()


@pytest.mark.parametrize("name", sorted(MESHES))
def test_hodge_entries(name):
    cx, geo = complex_geometry(name)
    assert np.allclose(geo.hodge[3], 1.0 / geo.tet_volume)
    assert np.all(np.isfinite(geo.hodge[2])) and np.all(geo.hodge[2] > 0)
    raw = geo.dual_length / geo.face_area
    keep = ~geo.limited
    assert np.array_equal(geo.hodge[2][keep], raw[keep])
    assert np.allclose(geo.hodge[2][geo.limited], 1e-8 / geo.face_area[geo.limited])


def test_negative_dual_lengths_clamped():
    cx, geo = complex_geometry("bcc3")
    neg = geo.dual_length < 0
    assert neg.any()
    assert np.all(geo.limited[neg])
    assert np.all(geo.hodge[2][neg] > 0)


def test_limiter_value_is_configurable():
    cx, _ = complex_geometry("kuhn2")
    geo = compute_geometry(cx, limiter=1e-4)
    lim = geo.limited
    assert np.allclose(hodge_star(cx, geo, 2, 1e-4)[lim], 1e-4 / geo.face_area[lim])


def test_zero_volume_tet_rejected():
    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=float)
    cx = build_complex(RawMesh(pts, [[0, 1, 2, 3]], np.zeros((0, 3)), []))
    with pytest.raises(DegenerateMeshError):
        compute_geometry(cx)


def test_barycentric_gradients_sum_to_zero():
    cx, _ = complex_geometry("cloud60")
    g = barycentric_gradients(cx)
    assert np.allclose(g.sum(axis=1), 0, atol=1e-9)
    t = cx.points[cx.tets]
    # grad l_i . (x_j - x_0) = delta_ij - delta_i0
    for j in range(1, 4):
        dots = np.einsum("mid,md->mi", g, t[:, j] - t[:, 0])
        expect = np.zeros(4)
        expect[j], expect[0] = 1, -1
        assert np.allclose(dots, expect, atol=1e-9)


def _face_flux(cx, F):
    """Integral of a constant field over each face, sorted right-hand normal."""
    P = cx.points[cx.faces]
    normal_area = 0.5 * np.cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0])
    return normal_area @ F


def test_whitney_zero():
    cx, geo = complex_geometry("kuhn2")
    assert np.array_equal(whitney_vector(cx, geo, np.zeros(cx.n_faces)), np.zeros((cx.n_tets, 3)))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, 3, elements=st.floats(-5, 5, width=64)), arrays(np.float64, 4, elements=st.floats(0.01, 1, width=64)))
def test_whitney_reproduces_constant_fields(F, lam):
    cx = build_complex(single_tet(np.array([[0.1, 0, 0], [1, 0.2, 0], [0.3, 1.1, 0.1], [0.2, 0.1, 0.9]])))
    geo = compute_geometry(cx)
    at = (lam / lam.sum())[None]
    v = whitney_vector(cx, geo, _face_flux(cx, F), at=at)
    assert np.allclose(v[0], F, atol=1e-12 * (1 + np.abs(F).max()))


@pytest.mark.parametrize("name", ["cloud60", "kuhn2"])
def test_whitney_constant_field_on_mesh(name):
    cx, geo = complex_geometry(name)
    F = np.array([0.3, -1.2, 2.0])
    assert np.allclose(whitney_vector(cx, geo, _face_flux(cx, F)), F, atol=1e-10)


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 1000))
def test_whitney_linear(a, b, seed):
    cx, geo = complex_geometry("kuhn1")
    rng = np.random.default_rng(seed)
    w1, w2 = rng.normal(size=(2, cx.n_faces))
    lhs = whitney_vector(cx, geo, a * w1 + b * w2)
    rhs = a * whitney_vector(cx, geo, w1) + b * whitney_vector(cx, geo, w2)
    assert np.allclose(lhs, rhs, atol=1e-12 * (1 + np.abs(rhs).max()))


@pytest.mark.parametrize("name, tol", [("jittered4", 1e-8), ("kuhn2", 1e-6)])
def test_pristine_flux_points_down(name, tol):
    kappa = 2.5
    problem = hot_cold(name, kappa)
    sol = problem.solve()
    v = whitney_vector(problem.complex_, problem.geometry, sol.omega)
    assert np.allclose(v, [0, 0, -kappa], atol=tol * kappa)


def test_whitney_shape_check():
    cx, geo = complex_geometry("kuhn1")
    with pytest.raises(ValueError):
        whitney_vector(cx, geo, np.zeros(3))
