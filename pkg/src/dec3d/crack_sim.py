"""Crack-insertion experiments on the hot/cold unit cube.

A cracking step solves the steady problem, records the effective
conductivity and turns one interior face into an insulator.  The
deterministic rule cracks the face carrying the largest flux density; the
stochastic rule cracks a uniformly random face.  Each run stops once the
effective conductivity falls to ``kappa_stop``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .assembly import Conductivity, SaddleSystem, apply_dirichlet, apply_neumann, assemble, crack_face
from .complex import SimplicialComplex, non_boundary_faces
from .geometry import DualGeometry
from .mesh_io import write_csv_history, write_csv_histories, write_vtk
from .solver import Solution, SolverConfig, solve

log = logging.getLogger(__name__)

RNG_ALGORITHM = "numpy.PCG64"
DEFAULT_SNAPSHOTS = (0.10, 0.25, 0.50, 0.75, 1.00)


class CrackSimError(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    hot_marker: int = 5
    cold_marker: int = 6
    insulated_markers: tuple = (1, 2, 3, 4)
    T_hot: float = 1.0
    T_cold: float = 0.0
    insulated_flux: float = 0.0
    kappa: float = 1.0
    kappa_stop: Optional[float] = None  # None means 1e-6 * kappa
    mode: str = "deterministic"
    n_paths: int = 1
    base_seed: int = 0
    selection: str = "density"  # or "raw": |omega| without dividing by area
    max_steps: Optional[int] = None
    snapshot_fractions: tuple = DEFAULT_SNAPSHOTS
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        sides = [self.hot_marker, self.cold_marker, *self.insulated_markers]
        if len(set(sides)) != len(sides):
            raise ValueError("boundary markers must be disjoint")
        if sorted(sides) != [1, 2, 3, 4, 5, 6]:
            raise ValueError("boundary markers must cover the six cube sides 1..6")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.mode not in ("deterministic", "stochastic"):
            raise ValueError("mode must be 'deterministic' or 'stochastic'")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.selection not in ("density", "raw"):
            raise ValueError("selection must be 'density' or 'raw'")
        if isinstance(self.solver, dict):
            self.solver = SolverConfig(**self.solver)

    @property
    def stop_threshold(self) -> float:
        return 1e-6 * self.kappa if self.kappa_stop is None else float(self.kappa_stop)


@dataclass
class CrackState:
    n_non_boundary: int
    mode: str = "deterministic"
    rng_seed: Optional[int] = None
    cracked: list = field(default_factory=list)
    kappa_e_history: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    terminated: bool = False
    failed: bool = False
    error: str = ""

    @property
    def D_n(self) -> float:
        return len(self.cracked) / self.n_non_boundary

    @property
    def D_n_history(self) -> np.ndarray:
        return np.arange(len(self.kappa_e_history)) / self.n_non_boundary

    def rows(self):
        for k, ke in enumerate(self.kappa_e_history):
            yield k, (self.cracked[k - 1] if k else None), k / self.n_non_boundary, ke

    def meta_line(self) -> str:
        seed = "none" if self.rng_seed is None else str(self.rng_seed)
        return f"# mode={self.mode} rng={RNG_ALGORITHM} seed={seed} non_boundary_faces={self.n_non_boundary}"


# --------------------------------------------------------------------------
# measurements
# --------------------------------------------------------------------------

def outward_signs(complex_: SimplicialComplex, faces) -> np.ndarray:
    """+1 where a boundary face's sorted normal points out of the domain."""
    faces = np.asarray(faces, dtype=np.int64)
    B = complex_.boundary[3].tocsr()
    return np.asarray(B[faces].sum(axis=1)).ravel().astype(float)


def effective_conductivity(solution: Solution, complex_: SimplicialComplex, geometry: DualGeometry = None, side: int = 5) -> float:
    """Total heat flow through one Dirichlet side of the unit cube.

    With unit temperature drop over a unit cube this equals the effective
    conductivity.  Face values are re-oriented outward before summing.
    """
    faces = complex_.faces_with_marker(side)
    if len(faces) == 0:
        raise CrackSimError(f"no boundary faces carry marker {side}")
    return float(abs(np.dot(outward_signs(complex_, faces), solution.omega[faces])))


def max_flux_face(solution: Solution, complex_: SimplicialComplex, geometry: DualGeometry, cracked=None, density: bool = True) -> int:
    """Uncracked interior face with the largest |omega| (per unit area by default).

    Ties go to the lowest face index.
    """
    cand = np.ones(complex_.n_faces, dtype=bool)
    cand[complex_.is_boundary_face] = False
    if cracked is not None:
        cracked = np.asarray(cracked)
        if cracked.dtype == bool:
            cand &= ~cracked
        elif len(cracked):
            cand[cracked.astype(np.int64)] = False
    if not cand.any():
        raise CrackSimError("no uncracked interior faces left")
    score = np.abs(solution.omega)
    if density:
        score = score / geometry.face_area
    score = np.where(cand, score, -np.inf)
    return int(np.argmax(score))


# --------------------------------------------------------------------------
# problem setup
# --------------------------------------------------------------------------

@dataclass(eq=False)
class CrackProblem:
    """Pristine hot/cold system plus everything a cracking run needs."""

    complex_: SimplicialComplex
    geometry: DualGeometry
    config: ExperimentConfig
    system: SaddleSystem
    n_boundary_entries: int
    interior: np.ndarray
    subs: Optional[list] = None

    @property
    def n_non_boundary(self) -> int:
        return len(self.interior)

    def reset(self):
        self.system.reset(self.n_boundary_entries)

    def solve(self, x0=None) -> Solution:
        sol = solve(self.system, self.config.solver, self.subs, x0=x0)
        if not sol.converged:
            raise CrackSimError(
                f"solver did not converge after {sol.iterations} iterations (residual {sol.residual_norm:.3e})"
            )
        return sol

    def kappa_e(self, sol: Solution) -> float:
        return effective_conductivity(sol, self.complex_, self.geometry, self.config.hot_marker)

    @property
    def tolerance(self) -> float:
        """Absolute slack used for monotonicity checks on kappa_e."""
        c = self.config.solver
        return 10.0 * max(c.rtol * float(np.linalg.norm(self.system.rhs)), c.atol)


def prepare(complex_: SimplicialComplex, geometry: DualGeometry, config: ExperimentConfig, subs=None, conductivity: Conductivity = None) -> CrackProblem:
    """Assemble the hot/cold/insulated cube; ``conductivity`` overrides the uniform kappa."""
    if conductivity is None:
        conductivity = Conductivity.uniform(complex_.n_faces, config.kappa)
    system = assemble(complex_, geometry, conductivity)
    apply_dirichlet(system, complex_.faces_with_marker(config.hot_marker), config.T_hot)
    apply_dirichlet(system, complex_.faces_with_marker(config.cold_marker), config.T_cold)
    ins = np.concatenate([complex_.faces_with_marker(m) for m in config.insulated_markers])
    apply_neumann(system, np.sort(ins), config.insulated_flux)
    interior = non_boundary_faces(complex_)
    if len(interior) == 0:
        raise CrackSimError("mesh has no interior faces")
    return CrackProblem(complex_, geometry, config, system, len(system.journal), interior, subs)


# --------------------------------------------------------------------------
# runs
# --------------------------------------------------------------------------

def _run(problem: CrackProblem, choose, state: CrackState) -> CrackState:
    cfg = problem.config
    stop = cfg.stop_threshold
    limit = problem.n_non_boundary if cfg.max_steps is None else min(cfg.max_steps, problem.n_non_boundary)
    cracked = np.zeros(problem.complex_.n_faces, dtype=bool)
    sol = None
    try:
        while True:
            sol = problem.solve(None if sol is None else sol.x)
            ke = problem.kappa_e(sol)
            state.kappa_e_history.append(ke)
            state.iterations.append(sol.iterations)
            log.debug("step %d: kappa_e=%.6e iterations=%d", len(state.cracked), ke, sol.iterations)
            if ke <= stop:
                state.terminated = True
                break
            if len(state.cracked) >= limit:
                break
            f = choose(sol, cracked)
            crack_face(problem.system, f)
            cracked[f] = True
            state.cracked.append(f)
    except Exception as exc:  # keep the partial history
        state.failed = True
        state.error = f"{type(exc).__name__}: {exc}"
        log.error("cracking run aborted after %d cracks: %s", len(state.cracked), state.error)
    return state


def run_deterministic(problem: CrackProblem) -> CrackState:
    """Crack the max-flux face after every solve until the cube stops conducting."""
    problem.reset()
    density = problem.config.selection == "density"
    state = CrackState(problem.n_non_boundary, "deterministic")

    def choose(sol, cracked):
        return max_flux_face(sol, problem.complex_, problem.geometry, cracked, density)

    return _run(problem, choose, state)


def run_stochastic(problem: CrackProblem, seed: int) -> CrackState:
    """One Monte Carlo path: crack uniformly random interior faces."""
    problem.reset()
    rng = np.random.Generator(np.random.PCG64(seed))
    interior = problem.interior
    state = CrackState(problem.n_non_boundary, "stochastic", int(seed))

    def choose(sol, cracked):
        remaining = interior[~cracked[interior]]
        if len(remaining) == 0:
            raise CrackSimError("no uncracked interior faces left")
        return int(remaining[rng.integers(len(remaining))])

    return _run(problem, choose, state)


def run_monte_carlo(problem: CrackProblem, n_paths: Optional[int] = None, base_seed: Optional[int] = None) -> list:
    """Independent stochastic paths with seeds ``base_seed + k``, in path order."""
    n_paths = problem.config.n_paths if n_paths is None else n_paths
    base_seed = problem.config.base_seed if base_seed is None else base_seed
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    states = []
    for k in range(n_paths):
        st = run_stochastic(problem, base_seed + k)
        if st.failed:
            log.warning("path %d (seed %d) failed: %s", k, base_seed + k, st.error)
        states.append(st)
    problem.reset()
    return states


def replay(problem: CrackProblem, sequence: Sequence[int], at=None) -> dict:
    """Re-apply a recorded crack sequence to the pristine system.

    Returns ``{n_cracks: Solution}`` for every count in ``at`` (all counts
    0..len(sequence) by default).
    """
    problem.reset()
    counts = set(range(len(sequence) + 1) if at is None else (int(a) for a in at))
    out = {}
    sol = None
    for k in range(len(sequence) + 1):
        if k in counts:
            sol = problem.solve(None if sol is None else sol.x)
            out[k] = sol
        if k < len(sequence):
            crack_face(problem.system, sequence[k])
    problem.reset()
    return out


def replay_kappa(problem: CrackProblem, sequence: Sequence[int]) -> list:
    sols = replay(problem, sequence)
    return [problem.kappa_e(sols[k]) for k in sorted(sols)]


def snapshot_counts(n_final: int, fractions=DEFAULT_SNAPSHOTS) -> list:
    """Crack counts for snapshots: the first crack plus fractions of the final count."""
    if n_final == 0:
        return [0]
    counts = {1} | {max(1, int(round(f * n_final))) for f in fractions}
    return sorted(c for c in counts if c <= n_final)


def write_snapshots(problem: CrackProblem, state: CrackState, out_dir, fractions=None) -> list:
    """VTK files at the first crack and at fractions of the final crack count."""
    out_dir = Path(out_dir)
    fractions = problem.config.snapshot_fractions if fractions is None else fractions
    counts = snapshot_counts(len(state.cracked), fractions)
    sols = replay(problem, state.cracked, counts)
    paths = []
    for k in counts:
        paths.append(write_vtk(problem.complex_, problem.geometry, sols[k], out_dir / f"snapshot_{k:06d}.vtk"))
    return paths


def write_histories(states: list, out_dir, name: str) -> list:
    out_dir = Path(out_dir)
    paths = [write_csv_histories(states, out_dir / f"{name}.csv")] if len(states) > 1 else [
        write_csv_history(states[0], out_dir / f"{name}.csv")
    ]
    return paths
