"""Deterministic versus stochastic cracking on a unit cube.

    python scripts/crack_experiment.py --cube-n 7 --paths 10 --out results/cracks
"""
import argparse
import time
from pathlib import Path

import numpy as np

from dec3d import build_complex, compute_geometry, generate_cube, generate_jittered_cube
from dec3d.crack_sim import ExperimentConfig, prepare, run_deterministic, run_stochastic, write_histories
from dec3d.solver import SolverConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cube-n", type=int, default=7)
    ap.add_argument("--cube-type", choices=["kuhn", "jittered"], default="kuhn")
    ap.add_argument("--paths", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("results/cracks"))
    args = ap.parse_args()

    mesh = generate_cube(args.cube_n) if args.cube_type == "kuhn" else generate_jittered_cube(args.cube_n)
    cx = build_complex(mesh)
    problem = prepare(cx, compute_geometry(cx), ExperimentConfig(solver=SolverConfig(schur_precond="direct")))
    print(f"{cx.n_tets} tets, {problem.n_non_boundary} interior faces")

    t0 = time.perf_counter()
    det = run_deterministic(problem)
    print(f"deterministic: D_n = {det.D_n:.4f} after {len(det.cracked)} cracks ({time.perf_counter() - t0:.1f} s)")
    write_histories([det], args.out, "deterministic")

    paths = []
    for k in range(args.paths):
        t0 = time.perf_counter()
        st = run_stochastic(problem, args.seed + k)
        paths.append(st)
        print(f"path {k} (seed {st.rng_seed}): D_n = {st.D_n:.4f} ({time.perf_counter() - t0:.1f} s)")
    problem.reset()
    write_histories(paths, args.out, "monte_carlo")

    dn = np.array([p.D_n for p in paths])
    print(f"stochastic D_n: mean {dn.mean():.4f}, min {dn.min():.4f}, max {dn.max():.4f}")
    print(f"ratio min stochastic / deterministic: {dn.min() / det.D_n:.1f}")


if __name__ == "__main__":
    main()
