"""Accuracy measurements against the affine hot/cold solution."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .complex import build_complex
from .crack_sim import ExperimentConfig, prepare
from .generators import bcc_cells_for_volume, generate_bcc_cube
from .geometry import DEFAULT_LIMITER, compute_geometry
from .solver import SolverConfig


def rms_error(computed, exact, volumes) -> float:
    """``sqrt(sum_i (T_comp - T_exact)^2 V_i)`` over tetrahedra."""
    d = np.asarray(computed, dtype=float) - np.asarray(exact, dtype=float)
    return float(np.sqrt(np.sum(d * d * np.asarray(volumes, dtype=float))))


def affine_exact(points, T_hot=1.0, T_cold=0.0, axis=2) -> np.ndarray:
    """Exact temperature of the hot (coordinate 0) / cold (coordinate 1) cube."""
    return T_hot + (T_cold - T_hot) * np.asarray(points)[..., axis]


def temperature_error(complex_, geometry, solution, config: ExperimentConfig = None) -> float:
    """RMS error of the tet temperatures, compared at tet circumcenters.

    The tet unknown is the temperature at its dual vertex, which is the
    circumcenter, so that is where the exact field is sampled.
    """
    config = config or ExperimentConfig()
    exact = affine_exact(geometry.circumcenters[3], config.T_hot, config.T_cold)
    return rms_error(solution.alpha, exact, geometry.tet_volume)


@dataclass
class ConvergenceRow:
    max_volume: float
    cells: int
    n_tets: int
    rms: float
    limited_percent: float
    kappa_e: float
    iterations: int


def convergence_study(levels: int = 4, max_volume: float = 3.1e-3, solver: SolverConfig = None, limiter: float = DEFAULT_LIMITER) -> list:
    """BCC cubes with the maximum tet volume halved at every level."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    cfg = ExperimentConfig(solver=solver or SolverConfig())
    rows = []
    for k in range(levels):
        vmax = max_volume / 2.0**k
        n = bcc_cells_for_volume(vmax)
        cx = build_complex(generate_bcc_cube(n))
        geo = compute_geometry(cx, limiter)
        problem = prepare(cx, geo, cfg)
        sol = problem.solve()
        rows.append(
            ConvergenceRow(
                vmax, n, cx.n_tets, temperature_error(cx, geo, sol, cfg), 100.0 * geo.limited_fraction(), problem.kappa_e(sol), sol.iterations
            )
        )
    return rows


def format_rows(rows) -> str:
    lines = [f"{'max volume':>12} {'cells':>6} {'tets':>8} {'RMS error':>12} {'limited %':>10} {'kappa_e':>12}"]
    for r in rows:
        lines.append(f"{r.max_volume:12.4e} {r.cells:6d} {r.n_tets:8d} {r.rms:12.4e} {r.limited_percent:10.4f} {r.kappa_e:12.8f}")
    return "\n".join(lines)
