"""Command-line mini-applications: solve, crack, convergence, prep.

Configuration comes from an optional JSON file; command-line flags override
individual keys.  The effective configuration is written to the output
directory as ``config.json`` and can be passed back with ``--config``.

Exit codes: 0 success, 2 configuration error, 3 mesh error, 4 solver error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .assembly import AssemblyError, Conductivity
from .complex import build_complex
from .crack_sim import (
    CrackSimError,
    ExperimentConfig,
    effective_conductivity,
    prepare,
    run_deterministic,
    run_monte_carlo,
    write_histories,
    write_snapshots,
)
from .generators import generate_bcc_cube, generate_cube, generate_jittered_cube
from .geometry import DEFAULT_LIMITER, DegenerateMeshError, compute_geometry
from .mesh_io import MeshError, read_tetgen, sort_mesh, write_obj, write_tetgen, write_vtk
from .partition import block_partition, build_partition
from .solver import SolverConfig, SolverError, residual
from .study import convergence_study, format_rows

log = logging.getLogger("dec3d")

OUT_ENV = "DEC3D_OUT"
EXIT_OK, EXIT_CONFIG, EXIT_MESH, EXIT_SOLVER = 0, 2, 3, 4
CUBE_TYPES = ("kuhn", "bcc", "jittered")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    mesh: Optional[str] = None  # TetGen file prefix
    cube_n: Optional[int] = None
    cube_type: str = "kuhn"
    mesh_seed: int = 0
    hot_marker: int = 5
    cold_marker: int = 6
    insulated_markers: list = field(default_factory=lambda: [1, 2, 3, 4])
    T_hot: float = 1.0
    T_cold: float = 0.0
    insulated_flux: float = 0.0
    kappa: float = 1.0
    kappa_file: Optional[str] = None  # one value per face, complex face order
    solver: dict = field(default_factory=lambda: {"schur_precond": "incomplete-cholesky"})
    mode: str = "deterministic"
    paths: int = 1
    seed: int = 0
    selection: str = "density"
    max_steps: Optional[int] = None
    snapshots: bool = True
    ranks: int = 1
    out: Optional[str] = None
    limiter: float = DEFAULT_LIMITER
    vtk_precision: int = 17
    levels: int = 4
    max_volume: float = 3.1e-3
    obj: bool = False

    def validate(self, need_mesh: bool = True):
        if self.mesh is not None and self.cube_n is not None:
            raise ConfigError("give either a mesh prefix or a built-in cube size, not both")
        if need_mesh and self.mesh is None and self.cube_n is None:
            raise ConfigError("no mesh source: set --mesh or --cube-n")
        if self.cube_n is not None and self.cube_n < 1:
            raise ConfigError("cube_n must be >= 1")
        if self.cube_type not in CUBE_TYPES:
            raise ConfigError(f"cube_type must be one of {CUBE_TYPES}")
        if self.ranks < 1:
            raise ConfigError("ranks must be >= 1")
        if self.paths < 1:
            raise ConfigError("paths must be >= 1")
        if self.levels < 1:
            raise ConfigError("levels must be >= 1")
        if self.max_volume <= 0:
            raise ConfigError("max_volume must be positive")
        try:
            self.solver_config()
            self.experiment()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        return self

    def solver_config(self) -> SolverConfig:
        return SolverConfig(**self.solver)

    def experiment(self) -> ExperimentConfig:
        return ExperimentConfig(
            hot_marker=self.hot_marker,
            cold_marker=self.cold_marker,
            insulated_markers=tuple(self.insulated_markers),
            T_hot=self.T_hot,
            T_cold=self.T_cold,
            insulated_flux=self.insulated_flux,
            kappa=self.kappa,
            mode=self.mode,
            n_paths=self.paths,
            base_seed=self.seed,
            selection=self.selection,
            max_steps=self.max_steps,
            solver=self.solver_config(),
        )

    def out_dir(self) -> Path:
        return Path(self.out or os.environ.get(OUT_ENV) or "dec3d_out")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["solver"] = dataclasses.asdict(self.solver_config())
        return d


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    names = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return RunConfig(**data)


# flag name -> (config key, solver sub-key or None)
_OVERRIDES = {
    "mesh": ("mesh", None),
    "cube_n": ("cube_n", None),
    "cube_type": ("cube_type", None),
    "ranks": ("ranks", None),
    "kappa": ("kappa", None),
    "kappa_file": ("kappa_file", None),
    "rtol": ("solver", "rtol"),
    "atol": ("solver", "atol"),
    "max_iters": ("solver", "max_iters"),
    "schur": ("solver", "schur_precond"),
    "inner_iters": ("solver", "inner_iters"),
    "limiter": ("limiter", None),
    "mode": ("mode", None),
    "paths": ("paths", None),
    "seed": ("seed", None),
    "selection": ("selection", None),
    "max_steps": ("max_steps", None),
    "out": ("out", None),
    "levels": ("levels", None),
    "max_volume": ("max_volume", None),
}


def effective_config(args) -> RunConfig:
    cfg = load_config(args.config)
    for flag, (key, sub) in _OVERRIDES.items():
        val = getattr(args, flag, None)
        if val is None:
            continue
        if sub is None:
            setattr(cfg, key, val)
        else:
            cfg.solver = {**cfg.solver, sub: val}
    if getattr(args, "no_snapshots", False):
        cfg.snapshots = False
    if getattr(args, "obj", False):
        cfg.obj = True
    return cfg


def echo_config(cfg: RunConfig, out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / "config.json"
    path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return path


# --------------------------------------------------------------------------
# shared steps
# --------------------------------------------------------------------------

def load_mesh(cfg: RunConfig):
    if cfg.mesh is not None:
        return read_tetgen(cfg.mesh)
    if cfg.cube_type == "kuhn":
        return generate_cube(cfg.cube_n)
    if cfg.cube_type == "bcc":
        return generate_bcc_cube(cfg.cube_n)
    return generate_jittered_cube(cfg.cube_n, seed=cfg.mesh_seed)


def build_problem(cfg: RunConfig):
    mesh = load_mesh(cfg)
    cx = build_complex(mesh)
    geo = compute_geometry(cx, cfg.limiter)
    subs = None
    if cfg.ranks > 1:
        subs = build_partition(cx, block_partition(cx.n_nodes, cfg.ranks))
    conductivity = None
    if cfg.kappa_file is not None:
        try:
            kappa = np.loadtxt(cfg.kappa_file, ndmin=1)
        except OSError as exc:
            raise ConfigError(f"cannot read conductivity file: {exc}") from None
        if kappa.shape != (cx.n_faces,):
            raise ConfigError(f"conductivity file has {kappa.size} values, mesh has {cx.n_faces} faces")
        conductivity = Conductivity(kappa, np.zeros(cx.n_faces, dtype=bool))
    for m in [cfg.hot_marker, cfg.cold_marker, *cfg.insulated_markers]:
        if len(cx.faces_with_marker(m)) == 0:
            raise MeshError(f"no boundary face carries marker {m}")
    return prepare(cx, geo, cfg.experiment(), subs, conductivity)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_solve(cfg: RunConfig) -> int:
    cfg.validate()
    out = cfg.out_dir()
    echo_config(cfg, out)
    problem = build_problem(cfg)
    sol = problem.solve()
    ke_hot = problem.kappa_e(sol)
    ke_cold = effective_conductivity(sol, problem.complex_, problem.geometry, cfg.cold_marker)
    write_vtk(problem.complex_, problem.geometry, sol, out / "solution.vtk", cfg.vtk_precision)
    summary = {
        "kappa_e": ke_hot,
        "kappa_e_cold_side": ke_cold,
        "iterations": sol.iterations,
        "converged": sol.converged,
        "residual_norm": sol.residual_norm,
        "true_residual": residual(problem.system, sol),
        "n_faces": problem.complex_.n_faces,
        "n_tets": problem.complex_.n_tets,
        "limited_fraction": problem.geometry.limited_fraction(),
        "ranks": cfg.ranks,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    (out / "residuals.txt").write_text("".join(f"{k} {r!r}\n" for k, r in enumerate(sol.history)))
    print(f"kappa_e = {ke_hot:.12g}")
    print(f"iterations = {sol.iterations}, residual = {sol.residual_norm:.3e}")
    return EXIT_OK


def cmd_crack(cfg: RunConfig) -> int:
    cfg.validate()
    out = cfg.out_dir()
    echo_config(cfg, out)
    problem = build_problem(cfg)
    if cfg.mode == "deterministic":
        states = [run_deterministic(problem)]
        write_histories(states, out, "deterministic")
        if cfg.snapshots and not states[0].failed:
            write_snapshots(problem, states[0], out / "snapshots")
    else:
        states = run_monte_carlo(problem, cfg.paths, cfg.seed)
        write_histories(states, out, "monte_carlo")
    failed = 0
    for k, st in enumerate(states):
        tag = "deterministic" if cfg.mode == "deterministic" else f"path {k} (seed {st.rng_seed})"
        status = "FAILED: " + st.error if st.failed else ("terminated" if st.terminated else "stopped")
        print(f"{tag}: D_n = {st.D_n:.6f}, kappa_e = {st.kappa_e_history[-1] if st.kappa_e_history else float('nan'):.6e}, {status}")
        failed += st.failed
    if failed:
        print(f"{failed} of {len(states)} runs failed", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_convergence(cfg: RunConfig) -> int:
    cfg.validate(need_mesh=False)
    out = cfg.out_dir()
    echo_config(cfg, out)
    rows = convergence_study(cfg.levels, cfg.max_volume, cfg.solver_config(), cfg.limiter)
    table = format_rows(rows)
    print(table)
    lines = ["max_volume,cells,n_tets,rms_error,limited_percent,kappa_e"]
    lines += [f"{r.max_volume!r},{r.cells},{r.n_tets},{r.rms!r},{r.limited_percent!r},{r.kappa_e!r}" for r in rows]
    (out / "convergence.csv").write_text("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_prep(cfg: RunConfig) -> int:
    cfg.validate()
    out = cfg.out_dir()
    echo_config(cfg, out)
    mesh = sort_mesh(load_mesh(cfg))
    stem = Path(cfg.mesh).name if cfg.mesh else f"cube{cfg.cube_n}"
    for p in write_tetgen(mesh, out / f"{stem}.sorted"):
        print(f"wrote {p}")
    plan = block_partition(len(mesh.points), cfg.ranks)
    print(plan.report())
    if cfg.obj:
        cx = build_complex(mesh)
        geo = compute_geometry(cx, cfg.limiter)
        print(f"wrote {write_obj(cx, geo, 'primal', out / f'{stem}.primal.obj')}")
        print(f"wrote {write_obj(cx, geo, 'dual', out / f'{stem}.dual.obj')}")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "crack": cmd_crack, "convergence": cmd_convergence, "prep": cmd_prep}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dec3d", description="Heat conduction and crack insertion on tetrahedral meshes.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON configuration file")
        src = p.add_mutually_exclusive_group()
        src.add_argument("--mesh", help="TetGen file prefix (reads PREFIX.node/.ele/.face)")
        src.add_argument("--cube-n", type=int, dest="cube_n", help="built-in unit cube with N cells per axis")
        p.add_argument("--cube-type", choices=CUBE_TYPES, dest="cube_type")
        p.add_argument("--ranks", type=int)
        p.add_argument("--limiter", type=float)
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./dec3d_out)")

    def solver_flags(p):
        p.add_argument("--kappa", type=float)
        p.add_argument("--kappa-file", dest="kappa_file")
        p.add_argument("--rtol", type=float)
        p.add_argument("--atol", type=float)
        p.add_argument("--max-iters", type=int, dest="max_iters")
        p.add_argument("--schur", choices=["jacobi", "sparse-approximate-inverse", "incomplete-cholesky", "direct"])
        p.add_argument("--inner-iters", type=int, dest="inner_iters")

    p = sub.add_parser("solve", help="steady hot/cold cube solve")
    common(p)
    solver_flags(p)

    p = sub.add_parser("crack", help="deterministic or Monte Carlo cracking")
    common(p)
    solver_flags(p)
    p.add_argument("--mode", choices=["deterministic", "stochastic"])
    p.add_argument("--paths", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--selection", choices=["density", "raw"])
    p.add_argument("--max-steps", type=int, dest="max_steps")
    p.add_argument("--no-snapshots", action="store_true", dest="no_snapshots")

    p = sub.add_parser("convergence", help="RMS error under refinement")
    common(p)
    solver_flags(p)
    p.add_argument("--levels", type=int)
    p.add_argument("--max-volume", type=float, dest="max_volume")

    p = sub.add_parser("prep", help="sort a mesh and print the block partition")
    common(p)
    p.add_argument("--obj", action="store_true", help="also write primal and dual OBJ files")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = effective_config(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MeshError, DegenerateMeshError, AssemblyError) as exc:
        print(f"mesh error: {exc}", file=sys.stderr)
        return EXIT_MESH
    except (SolverError, CrackSimError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
