"""Flexible GMRES with a block-triangular Schur-complement preconditioner.

The A block is diagonal, so the Schur complement ``S = C - B^T A^-1 B`` is
formed exactly; only its inverse is approximated.  ``C`` is zero except for
one pinned temperature per floating cluster of tetrahedra.

Solves run on an emulated partition: each rank owns a slice of the unknowns,
refreshes ghosts through halo exchanges before local products, and dot
products are reduced over ranks in rank order.  One rank is the serial case.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import SaddleSystem, floating_tets
from .partition import exchange, unknown_schedules

log = logging.getLogger(__name__)

SCHUR_PRECONDITIONERS = ("jacobi", "sparse-approximate-inverse", "incomplete-cholesky", "direct")


class SolverError(RuntimeError):
    pass


@dataclass
class SolverConfig:
    rtol: float = 1e-10
    atol: float = 1e-10
    max_iters: int = 10000
    restart: int = 30
    schur_precond: str = "jacobi"
    inner_iters: int = 0  # PCG sweeps on the Schur block per preconditioner call
    ilu_drop_tol: float = 1e-4

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("tolerances must be positive")
        if self.restart < 1:
            raise ValueError("restart must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.schur_precond not in SCHUR_PRECONDITIONERS:
            raise ValueError(f"schur_precond must be one of {SCHUR_PRECONDITIONERS}")
        if self.inner_iters < 0:
            raise ValueError("inner_iters must be >= 0")


@dataclass
class Solution:
    omega: np.ndarray
    alpha: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list, repr=False)
    pinned: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64), repr=False)
    breakdown: bool = False

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.omega, self.alpha])


# --------------------------------------------------------------------------
# Schur complement
# --------------------------------------------------------------------------

def pin_values(system: SaddleSystem, pinned: np.ndarray) -> np.ndarray:
    """Diagonal of C: a negative value of Schur-diagonal scale at pinned tets."""
    c = np.zeros(system.n_tets)
    if len(pinned):
        a = system.A_diag
        act = system.active
        scale = float(np.mean(1.0 / a[act])) if act.any() else 1.0
        c[pinned] = -scale
    return c


def schur_complement(system: SaddleSystem, pinned=None) -> sp.csr_matrix:
    """``C - B^T diag(A)^-1 B`` for the current (possibly cracked) system."""
    a = system.A_diag
    if np.any(a == 0):
        raise SolverError("zero diagonal in the A block")
    B = system.B.tocsc()
    S = -(B.T @ sp.diags(1.0 / a) @ B)
    if pinned is not None and len(pinned):
        S = S + sp.diags(pin_values(system, np.asarray(pinned)))
    S = sp.csr_matrix(S)
    S.sort_indices()
    return S


def spai(S: sp.csr_matrix) -> sp.csr_matrix:
    """Sparse approximate inverse on the pattern of S (Frobenius-norm fit, column by column)."""
    S = sp.csc_matrix(S)
    n = S.shape[0]
    rows, cols, vals = [], [], []
    for j in range(n):
        J = S.indices[S.indptr[j]:S.indptr[j + 1]]
        if len(J) == 0:
            continue
        sub = S[:, J]
        I = np.unique(sub.indices)
        dense = sub[I].toarray()
        e = (I == j).astype(float)
        m = np.linalg.lstsq(dense, e, rcond=None)[0]
        rows.append(J)
        cols.append(np.full(len(J), j))
        vals.append(m)
    if not rows:
        return sp.csr_matrix((n, n))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


class _SchurInverse:
    """Approximate ``S^-1`` on one rank's owned tetrahedra."""

    def __init__(self, kind: str, S_block: sp.csr_matrix, drop_tol: float):
        self.kind = kind
        d = S_block.diagonal()
        if kind == "jacobi":
            self.inv_diag = np.where(d != 0, 1.0 / np.where(d != 0, d, 1.0), 0.0)
        elif kind == "sparse-approximate-inverse":
            self.M = spai(S_block)
        elif kind == "incomplete-cholesky":
            # threshold ILU of the SPD matrix -S, symmetric pattern
            self.fact = spla.spilu(sp.csc_matrix(-S_block), drop_tol=drop_tol, fill_factor=20, permc_spec="MMD_AT_PLUS_A")
        elif kind == "direct":
            self.fact = spla.splu(sp.csc_matrix(-S_block), permc_spec="MMD_AT_PLUS_A")
        else:
            raise ValueError(kind)

    def __call__(self, g: np.ndarray) -> np.ndarray:
        if g.size == 0:
            return g.copy()
        if self.kind == "jacobi":
            return self.inv_diag * g
        if self.kind == "sparse-approximate-inverse":
            return self.M @ g
        return -self.fact.solve(g)


# --------------------------------------------------------------------------
# emulated distributed operator
# --------------------------------------------------------------------------

class DistributedSaddle:
    """Saddle operator split over ranks with ghost refresh before products.

    Vectors live in *layout order*: rank 0's owned unknowns (faces, then tets),
    then rank 1's, and so on.  ``order[k]`` is the global unknown id at layout
    position k.
    """

    def __init__(self, system: SaddleSystem, subs: Optional[list], config: SolverConfig, pinned: np.ndarray):
        self.system = system
        self.config = config
        nf = system.n_faces
        M = system.matrix
        c = pin_values(system, pinned)
        self.c_global = c
        a = system.A_diag

        if not subs:
            subs = None
        self.subs = subs
        if subs is None:
            self.order = np.arange(system.n)
            self.bounds = [(0, system.n)]
            self.n_of = [nf]
        else:
            owned = [s.unknowns(nf)[: s.n_owned] for s in subs]
            self.order = np.concatenate(owned)
            ends = np.cumsum([len(o) for o in owned])
            self.bounds = list(zip(np.concatenate([[0], ends[:-1]]), ends))
            self.n_of = [s.n_owned_faces for s in subs]
        self.n_ranks = len(self.bounds)

        Cmat = sp.diags(np.concatenate([np.zeros(nf), c]))
        Mp = (M + Cmat).tocsr() if np.any(c) else M
        self.local = []
        S_full = None
        if config.schur_precond != "jacobi":
            S_full = schur_complement(system, pinned)
        Sdiag = c - np.asarray((system.B.multiply(system.B)).T @ (1.0 / a)).ravel()

        for r in range(self.n_ranks):
            if subs is None:
                rows = cols = np.arange(system.n)
                n_own = system.n
                fsched = tsched = ({}, {})
            else:
                sub = subs[r]
                cols = sub.unknowns(nf)
                rows = cols[: sub.n_owned]
                n_own = sub.n_owned
                fsched, tsched = unknown_schedules(sub)
            Ml = Mp if subs is None else Mp[rows][:, cols].tocsr()
            nof = self.n_of[r]
            col_is_face = cols < nf
            owned_tets = rows[nof:] - nf
            S_inv = None
            if config.schur_precond == "jacobi":
                S_block = sp.diags(Sdiag[owned_tets]).tocsr()
            else:
                S_block = S_full[owned_tets][:, owned_tets].tocsr()
            S_inv = _SchurInverse(config.schur_precond, S_block, config.ilu_drop_tol)
            self.local.append(
                dict(
                    M=Ml,
                    n_own=n_own,
                    n_loc=len(cols),
                    nof=nof,
                    a=a[rows[:nof]],
                    c=c[owned_tets],
                    Bt=Ml[nof:][:, col_is_face].tocsr(),  # owned tets x local faces
                    B=Ml[:nof][:, ~col_is_face].tocsr(),  # owned faces x local tets
                    face_cols=np.flatnonzero(col_is_face),
                    tet_cols=np.flatnonzero(~col_is_face),
                    fsched=fsched,
                    tsched=tsched,
                    S_inv=S_inv,
                )
            )
        self.face_sends = [L["fsched"][0] for L in self.local]
        self.face_recvs = [L["fsched"][1] for L in self.local]
        self.tet_sends = [L["tsched"][0] for L in self.local]
        self.tet_recvs = [L["tsched"][1] for L in self.local]

    # -- layout helpers --------------------------------------------------

    def to_layout(self, x_global: np.ndarray) -> np.ndarray:
        return np.asarray(x_global)[self.order]

    def to_global(self, x_layout: np.ndarray) -> np.ndarray:
        out = np.empty_like(x_layout)
        out[self.order] = x_layout
        return out

    def parts(self, x):
        return [x[lo:hi] for lo, hi in self.bounds]

    def _with_ghosts(self, x, sends, recvs, tag):
        locs = []
        for (lo, hi), L in zip(self.bounds, self.local):
            v = np.zeros(L["n_loc"])
            v[: L["n_own"]] = x[lo:hi]
            locs.append(v)
        if self.n_ranks > 1:
            exchange(locs, sends, recvs, tag)
        return locs

    # -- collective operations -------------------------------------------

    def dot(self, u, v) -> float:
        return float(sum(np.dot(u[lo:hi], v[lo:hi]) for lo, hi in self.bounds))

    def dots(self, V, w) -> np.ndarray:
        total = np.zeros(V.shape[0])
        for lo, hi in self.bounds:
            total += V[:, lo:hi] @ w[lo:hi]
        return total

    def norm(self, u) -> float:
        return float(np.sqrt(self.dot(u, u)))

    def matvec(self, x):
        if self.n_ranks == 1:
            return self.local[0]["M"] @ x
        locs = self._with_ghosts(x, self.face_sends, self.face_recvs, "face")
        exchange(locs, self.tet_sends, self.tet_recvs, "tet")
        out = np.empty_like(x)
        for (lo, hi), L, v in zip(self.bounds, self.local, locs):
            out[lo:hi] = L["M"] @ v
        return out

    def _ghost_faces(self, fvals):
        """Per-rank local face arrays (owned + ghost) from owned face values."""
        if self.n_ranks == 1:
            return fvals
        locs = []
        for L, fv in zip(self.local, fvals):
            v = np.zeros(L["n_loc"])
            v[: L["nof"]] = fv
            locs.append(v)
        exchange(locs, self.face_sends, self.face_recvs, "face")
        return [v[L["face_cols"]] for L, v in zip(self.local, locs)]

    def _ghost_tets(self, tvals):
        if self.n_ranks == 1:
            return tvals
        locs = []
        for L, tv in zip(self.local, tvals):
            v = np.zeros(L["n_loc"])
            v[L["nof"]: L["n_own"]] = tv
            locs.append(v)
        exchange(locs, self.tet_sends, self.tet_recvs, "tet")
        return [v[L["tet_cols"]] for L, v in zip(self.local, locs)]

    def _schur_apply(self, y):
        """Per-rank owned-tet lists y -> S y."""
        yl = self._ghost_tets(y)
        w = [(L["B"] @ v) / L["a"] for L, v in zip(self.local, yl)]
        wl = self._ghost_faces(w)
        return [L["c"] * yi - L["Bt"] @ v for L, yi, v in zip(self.local, y, wl)]

    def _tdot(self, u, v):
        return float(sum(np.dot(a, b) for a, b in zip(u, v)))

    def _schur_solve(self, g):
        base = [L["S_inv"](gi) for L, gi in zip(self.local, g)]
        k = self.config.inner_iters
        if k == 0:
            return base
        # PCG on K = -S (SPD); preconditioner -S_inv
        b = [-gi for gi in g]
        y = [np.zeros_like(gi) for gi in g]
        r = [bi.copy() for bi in b]
        z = [-L["S_inv"](ri) for L, ri in zip(self.local, r)]
        p = [zi.copy() for zi in z]
        rz = self._tdot(r, z)
        for _ in range(k):
            if rz <= 0:
                break
            Kp = [-v for v in self._schur_apply(p)]
            pKp = self._tdot(p, Kp)
            if pKp <= 0:
                break
            step = rz / pKp
            y = [yi + step * pi for yi, pi in zip(y, p)]
            r = [ri - step * kpi for ri, kpi in zip(r, Kp)]
            z = [-L["S_inv"](ri) for L, ri in zip(self.local, r)]
            rz_new = self._tdot(r, z)
            p = [zi + (rz_new / rz) * pi for zi, pi in zip(z, p)]
            rz = rz_new
        return y

    def precondition(self, r):
        """Block-triangular Schur solve: y ~ S^-1 (r_a - B^T A^-1 r_w), w = A^-1 (r_w - B y)."""
        parts = self.parts(r)
        rw = [p[: L["nof"]] for p, L in zip(parts, self.local)]
        ra = [p[L["nof"]:] for p, L in zip(parts, self.local)]
        u = [rwi / L["a"] for rwi, L in zip(rw, self.local)]
        ul = self._ghost_faces(u)
        g = [rai - L["Bt"] @ v for rai, L, v in zip(ra, self.local, ul)]
        y = self._schur_solve(g)
        yl = self._ghost_tets(y)
        out = np.empty_like(r)
        for (lo, hi), L, rwi, yi, v in zip(self.bounds, self.local, rw, y, yl):
            out[lo: lo + L["nof"]] = (rwi - L["B"] @ v) / L["a"]
            out[lo + L["nof"]: hi] = yi
        return out


# --------------------------------------------------------------------------
# FGMRES
# --------------------------------------------------------------------------

def fgmres(op, b, x0=None, rtol=1e-10, atol=1e-10, restart=30, max_iters=10000):
    """Right-preconditioned flexible GMRES with classical Gram-Schmidt done twice.

    ``op`` provides ``matvec``, ``precondition``, ``dot``, ``dots`` and ``norm``.
    Returns ``(x, residual_norm, iterations, converged, history, breakdown)``;
    the returned residual is recomputed as ``b - A x``.
    """
    n = len(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    bnorm = op.norm(b)
    tol = max(rtol * bnorm, atol)
    r = b - op.matvec(x)
    beta = op.norm(r)
    history = [beta]
    iters = 0
    breakdown = False
    m = restart
    while beta > tol and iters < max_iters:
        V = np.zeros((m + 1, n))
        Z = np.zeros((m, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        k = 0
        happy = False
        for j in range(m):
            Z[j] = op.precondition(V[j])
            w = op.matvec(Z[j])
            h = op.dots(V[: j + 1], w)
            w = w - h @ V[: j + 1]
            h2 = op.dots(V[: j + 1], w)
            w = w - h2 @ V[: j + 1]
            h = h + h2
            hn = op.norm(w)
            H[: j + 1, j] = h
            H[j + 1, j] = hn
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            denom = np.hypot(H[j, j], H[j + 1, j])
            if denom == 0.0:
                cs[j], sn[j] = 1.0, 0.0
            else:
                cs[j], sn[j] = H[j, j] / denom, H[j + 1, j] / denom
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            iters += 1
            k = j + 1
            history.append(float(abs(g[j + 1])))
            if hn <= 1e-14 * max(abs(h).max(initial=0.0), 1e-300):
                happy = True
                break
            if abs(g[j + 1]) <= tol or iters >= max_iters:
                break
            V[j + 1] = w / hn
        Hk = H[:k, :k]
        diag = np.abs(np.diag(Hk))
        if np.any(diag <= 1e-300):
            keep = int(np.argmax(diag <= 1e-300))
            k = keep
            breakdown = True
        if k > 0:
            y = sla.solve_triangular(H[:k, :k], g[:k])
            x = x + y @ Z[:k]
        r = b - op.matvec(x)
        new_beta = op.norm(r)
        history[-1] = new_beta
        if (happy or breakdown) and new_beta > tol:
            # invariant subspace reached without meeting the tolerance
            if new_beta >= beta * (1 - 1e-12):
                breakdown = True
                beta = new_beta
                break
        beta = new_beta
        if breakdown and k == 0:
            break
    return x, beta, iters, beta <= tol, history, breakdown and beta > tol


# --------------------------------------------------------------------------
# public entry points
# --------------------------------------------------------------------------

def solve(system: SaddleSystem, config: Optional[SolverConfig] = None, subs: Optional[list] = None, x0=None) -> Solution:
    """Solve the saddle system; ``subs`` (local sub-complexes) selects a partitioned run."""
    config = config or SolverConfig()
    pinned = floating_tets(system)
    op = DistributedSaddle(system, subs, config, pinned)
    b = op.to_layout(system.rhs)
    x0l = None if x0 is None else op.to_layout(np.asarray(x0, dtype=float))
    x, res, its, ok, hist, brk = fgmres(
        op, b, x0l, rtol=config.rtol, atol=config.atol, restart=config.restart, max_iters=config.max_iters
    )
    xg = op.to_global(x)
    nf = system.n_faces
    if not ok:
        log.warning("FGMRES stopped after %d iterations, residual %.3e%s", its, res, " (breakdown)" if brk else "")
    else:
        log.debug("FGMRES converged in %d iterations, residual %.3e", its, res)
    return Solution(xg[:nf].copy(), xg[nf:].copy(), float(res), its, bool(ok), hist, pinned, bool(brk))


def pinned_matrix(system: SaddleSystem, pinned=None) -> sp.csr_matrix:
    if pinned is None:
        pinned = floating_tets(system)
    c = pin_values(system, np.asarray(pinned, dtype=np.int64))
    if not np.any(c):
        return system.matrix
    return (system.matrix + sp.diags(np.concatenate([np.zeros(system.n_faces), c]))).tocsr()


def solve_direct(system: SaddleSystem, dense_limit: int = 2000) -> Solution:
    """Reference solve: dense LU up to ``dense_limit`` unknowns, sparse LU beyond."""
    pinned = floating_tets(system)
    M = pinned_matrix(system, pinned)
    if system.n <= dense_limit:
        x = np.linalg.solve(M.toarray(), system.rhs)
    else:
        x = spla.spsolve(M.tocsc(), system.rhs)
    nf = system.n_faces
    sol = Solution(x[:nf], x[nf:], 0.0, 0, True, [], pinned)
    sol.residual_norm = residual(system, sol)
    return sol


def residual(system: SaddleSystem, solution: Solution) -> float:
    """``||M x - rhs||_2`` on the unpinned system, independent of the Krylov recurrence."""
    x = np.concatenate([solution.omega, solution.alpha])
    return float(np.linalg.norm(system.matrix @ x - system.rhs))
