import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dec3d.assembly import floating_tets
from dec3d.partition import (
    HaloError,
    Mailbox,
    block_partition,
    build_local,
    build_partition,
    exchange,
    face_owners,
    halo_exchange,
    tet_owners,
)
from dec3d.solver import DistributedSaddle, SolverConfig, solve

from helpers import complex_geometry, hot_cold


def test_hundred_cells_six_ranks():
    plan = block_partition(100, 6)
    assert plan.sizes == (17, 17, 17, 17, 16, 16)
    assert plan.ranges == [(1, 17), (18, 34), (35, 51), (52, 68), (69, 84), (85, 100)]
    report = plan.report().splitlines()
    assert report[1].split("|")[1:] == [f" {n:>7d} " for n in plan.sizes[:-1]] + [f" {plan.sizes[-1]:>7d}"]
    assert "85-100" in report[2]


def test_small_partitions():
    assert block_partition(7, 3).sizes == (3, 2, 2)
    assert block_partition(9, 1).ranges == [(1, 9)]
    assert block_partition(5, 5).sizes == (1,) * 5
    with pytest.raises(ValueError):
        block_partition(3, 4)
    with pytest.raises(ValueError):
        block_partition(3, 0)


@given(st.integers(1, 5000), st.integers(1, 64))
def test_block_sizes_property(n, p):
    if p > n:
        return
    plan = block_partition(n, p)
    assert sum(plan.sizes) == n
    assert max(plan.sizes) - min(plan.sizes) <= 1
    assert list(plan.sizes) == sorted(plan.sizes, reverse=True)
    assert plan.owner(np.arange(n)).tolist() == np.repeat(np.arange(p), plan.sizes).tolist()


def _subs(name, ranks):
    cx, _ = complex_geometry(name)
    return cx, build_partition(cx, block_partition(cx.n_nodes, ranks))


@pytest.mark.parametrize("name,ranks", [("kuhn3", 2), ("kuhn3", 4), ("jittered4", 3), ("cloud60", 8)])
def test_ownership_is_a_partition(name, ranks):
    cx, subs = _subs(name, ranks)
    for attr, n in (("owned_tets", cx.n_tets), ("owned_faces", cx.n_faces)):
        allv = np.concatenate([getattr(s, attr) for s in subs])
        assert len(allv) == n and len(np.unique(allv)) == n
    nodes = np.concatenate([s.owned_nodes for s in subs])
    assert np.array_equal(nodes, np.arange(cx.n_nodes))


@pytest.mark.parametrize("name,ranks", [("kuhn3", 4), ("jittered4", 3), ("cloud60", 8)])
def test_ghosts_match_brute_force(name, ranks):
    cx, subs = _subs(name, ranks)
    plan = block_partition(cx.n_nodes, ranks)
    tow = tet_owners(cx, plan)
    fow = face_owners(cx, tow)
    for s in subs:
        r = s.rank
        ghost_f, ghost_t = set(), set()
        for t in range(cx.n_tets):
            if tow[t] != r:
                continue
            for f in cx.tet_faces[t]:
                if fow[f] != r:
                    ghost_f.add(int(f))
        for f in range(cx.n_faces):
            if fow[f] != r:
                continue
            for t in cx.face_tets[f]:
                if t >= 0 and tow[t] != r:
                    ghost_t.add(int(t))
        assert set(s.ghost_faces.tolist()) == ghost_f
        assert set(s.ghost_tets.tolist()) == ghost_t
        assert list(s.ghost_faces) == sorted(ghost_f) and list(s.ghost_tets) == sorted(ghost_t)


@pytest.mark.parametrize("ranks", [2, 4, 8])
def test_every_ghost_is_referenced_by_an_owned_row(ranks):
    problem = hot_cold("jittered4")
    cx = problem.complex_
    subs = build_partition(cx, block_partition(cx.n_nodes, ranks))
    M = problem.system.matrix
    for s in subs:
        cols = s.unknowns(cx.n_faces)
        local = M[cols[: s.n_owned]][:, cols]
        used = np.unique(local.indices)
        assert np.all(np.isin(np.arange(s.n_owned, len(cols)), used))


def test_owner_tie_breaks():
    cx, subs = _subs("kuhn3", 4)
    plan = block_partition(cx.n_nodes, 4)
    tow = tet_owners(cx, plan)
    assert np.array_equal(tow, plan.owner(cx.tets.min(axis=1)))
    fow = face_owners(cx, tow)
    ft = cx.face_tets
    two = ft[:, 1] >= 0
    assert np.all(fow[two] == np.minimum(tow[ft[two, 0]], tow[ft[two, 1]]))


@pytest.mark.parametrize("ranks", [2, 4, 8])
def test_halo_exchange_fills_ghosts(ranks):
    cx, subs = _subs("jittered4", ranks)
    for kind, ids in (("tet", "tets"), ("face", "faces")):
        n_owned = "n_owned_tets" if kind == "tet" else "n_owned_faces"
        vals = []
        for s in subs:
            v = np.full(len(getattr(s, ids)), -1.0)
            v[: getattr(s, n_owned)] = getattr(s, ids)[: getattr(s, n_owned)]
            vals.append(v)
        halo_exchange(vals, subs, kind)
        for s, v in zip(subs, vals):
            assert np.array_equal(v, getattr(s, ids).astype(float))
        # constant field stays constant, rank stamps name the owner
        const = [np.full(len(getattr(s, ids)), 7.5) for s in subs]
        halo_exchange(const, subs, kind)
        assert all(np.all(c == 7.5) for c in const)


def test_rank_stamp():
    cx, subs = _subs("kuhn3", 4)
    plan = block_partition(cx.n_nodes, 4)
    tow = tet_owners(cx, plan)
    vals = [np.where(np.arange(len(s.tets)) < s.n_owned_tets, s.rank, -1).astype(float) for s in subs]
    halo_exchange(vals, subs, "tet")
    for s, v in zip(subs, vals):
        assert np.array_equal(v, tow[s.tets])


def test_schedules_are_symmetric():
    cx, subs = _subs("cloud60", 8)
    for s in subs:
        for q, send in s.tet_send.items():
            assert len(subs[q].tet_recv[s.rank]) == len(send)
            assert np.array_equal(s.tets[send], subs[q].tets[subs[q].tet_recv[s.rank]])
        for q, send in s.face_send.items():
            assert np.array_equal(s.faces[send], subs[q].faces[subs[q].face_recv[s.rank]])
        assert s.rank not in s.neighbours


def test_mismatched_buffer_is_an_error():
    cx, subs = _subs("kuhn3", 2)
    vals = [np.zeros(len(s.tets)) for s in subs]
    sends = [dict(s.tet_send) for s in subs]
    r = next(k for k, snd in enumerate(sends) if snd)
    q = next(iter(sends[r]))
    sends[r][q] = sends[r][q][:-1]
    with pytest.raises(HaloError):
        exchange(vals, sends, [s.tet_recv for s in subs], "tet")


def test_missing_message_is_an_error():
    box = Mailbox()
    with pytest.raises(HaloError):
        box.recv(0, 1, "tet")
    cx, subs = _subs("kuhn3", 2)
    vals = [np.zeros(len(s.tets)) for s in subs]
    with pytest.raises(HaloError):
        exchange(vals, [{} for _ in subs], [s.tet_recv for s in subs], "tet")


def test_build_local_and_plan_mismatch():
    cx, subs = _subs("kuhn3", 4)
    s2 = build_local(cx, block_partition(cx.n_nodes, 4), 2)
    assert np.array_equal(s2.tets, subs[2].tets)
    with pytest.raises(ValueError):
        build_local(cx, block_partition(cx.n_nodes, 4), 4)
    with pytest.raises(ValueError):
        build_partition(cx, block_partition(cx.n_nodes + 1, 4))


@pytest.mark.parametrize("ranks", [2, 4])
@pytest.mark.parametrize("name", ["kuhn3", "jittered4"])
def test_distributed_matvec_matches_serial(name, ranks):
    problem = hot_cold(name)
    s = problem.system
    cx = problem.complex_
    subs = build_partition(cx, block_partition(cx.n_nodes, ranks))
    pinned = floating_tets(s)
    op = DistributedSaddle(s, subs, SolverConfig(), pinned)
    serial = DistributedSaddle(s, None, SolverConfig(), pinned)
    x = np.random.default_rng(ranks).normal(size=s.n)
    y = op.to_global(op.matvec(op.to_layout(x)))
    assert np.abs(y - serial.matvec(x)).max() <= 1e-14 * max(1.0, np.abs(y).max())
    # jacobi is rank independent
    p1 = serial.precondition(x)
    p2 = op.to_global(op.precondition(op.to_layout(x)))
    assert np.abs(p1 - p2).max() <= 1e-13 * np.abs(p1).max()


@pytest.mark.parametrize("ranks", [2, 4, 8])
@pytest.mark.parametrize("precond", ["jacobi", "incomplete-cholesky"])
def test_partitioned_solve_matches_serial(ranks, precond):
    cfg = SolverConfig(schur_precond=precond, inner_iters=10 if precond == "jacobi" else 0)
    problem = hot_cold("jittered4", solver=cfg)
    serial = problem.solve()
    cx = problem.complex_
    problem.subs = build_partition(cx, block_partition(cx.n_nodes, ranks))
    par = problem.solve()
    tol = 10 * max(cfg.rtol * np.linalg.norm(problem.system.rhs), cfg.atol)
    assert np.abs(par.x - serial.x).max() <= tol
    assert abs(problem.kappa_e(par) - problem.kappa_e(serial)) <= 1e-8


def test_partitioned_solve_with_cracks():
    problem = hot_cold("kuhn3", solver=SolverConfig(schur_precond="incomplete-cholesky"))
    from dec3d import crack_face

    for f in problem.interior[::9]:
        crack_face(problem.system, int(f))
    serial = problem.solve()
    problem.subs = build_partition(problem.complex_, block_partition(problem.complex_.n_nodes, 4))
    par = problem.solve()
    assert abs(problem.kappa_e(par) - problem.kappa_e(serial)) <= 1e-8
    problem.reset()
