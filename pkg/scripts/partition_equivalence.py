"""Block partition table and rank-count equivalence of the saddle solve.

    python scripts/partition_equivalence.py --cube-n 14
"""
import argparse
import time

import numpy as np

from dec3d import build_complex, compute_geometry, generate_cube
from dec3d.crack_sim import ExperimentConfig, prepare
from dec3d.partition import block_partition, build_partition
from dec3d.solver import SolverConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cube-n", type=int, default=14)
    ap.add_argument("--ranks", type=int, nargs="+", default=[1, 2, 4, 8])
    args = ap.parse_args()

    print(block_partition(100, 6).report())
    print()

    cx = build_complex(generate_cube(args.cube_n))
    cfg = SolverConfig(schur_precond="jacobi", inner_iters=30)
    problem = prepare(cx, compute_geometry(cx), ExperimentConfig(solver=cfg))
    print(f"{problem.system.n} equations")
    ref = None
    for ranks in args.ranks:
        problem.subs = None if ranks == 1 else build_partition(cx, block_partition(cx.n_nodes, ranks))
        t0 = time.perf_counter()
        sol = problem.solve()
        dt = time.perf_counter() - t0
        ke = problem.kappa_e(sol)
        if ref is None:
            ref = (sol, ke)
        dx = np.abs(sol.x - ref[0].x).max()
        print(f"ranks {ranks}: {sol.iterations} iterations, {dt:.2f} s, kappa_e {ke:.12f}, max |dx| vs first {dx:.2e}")


if __name__ == "__main__":
    main()
