"""Command line entry point.

Subcommands: ``find-profile``, ``simulate``, ``verify``, ``oracle-compare``
and ``emit-analytic``. Exit codes: 0 success, 2 configuration error,
3 non-convergence, 4 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .errors import ConfigError, DomainError, GridMismatchError, StiffnessError
from .operator import (
    DensityField,
    brute_force_parts,
    build_redistribution,
    collision_parts,
    gain_renormalization,
    make_geometric_grid,
    oracle_mass_defect,
    read_field_csv,
    write_field_csv,
)
from .solver import (
    EvolutionState,
    initial_field,
    reference_profile,
    run_to_stationarity,
    self_similar_distance,
    simulate_physical,
    simulate_rescaled,
)
from .verify import verify_profile

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED, EXIT_VERIFY = 0, 2, 3, 4
MAX_ORACLE_CELLS = 64

logger = logging.getLogger("breakage_profiles")


def _write_history(state: EvolutionState, path: Path) -> None:
    rows = state.history
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        keys = list(rows[0])
        writer.writerow(keys)
        for row in rows:
            writer.writerow([repr(float(row[k])) for k in keys])


def _write_json(data: dict, path: Path) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _manifest(cfg: RunConfig, command: str, **extra) -> dict:
    return {"tool": "breakage-profiles", "version": __version__, "command": command,
            "seed": cfg.seed, "parameters": cfg.resolved(), **extra}


def _load(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config)
    return cfg.with_overrides(cells=args.cells, tol=args.tol, out=args.out)


def _initial(cfg: RunConfig, grid) -> DensityField:
    block = cfg.initial
    if "csv" in block:
        path = Path(block["csv"])
        field, _ = read_field_csv(path if path.is_absolute() else cfg.base_dir / path)
        if not field.grid.same_as(grid):
            raise GridMismatchError("initial CSV grid differs from the configured grid")
        return field
    params = {"x0": block["x0"]} if "x0" in block else {}
    return initial_field(grid, block.get("shape", "exponential"), **params)


def cmd_find_profile(args: argparse.Namespace) -> int:
    cfg = _load(args)
    K, law, grid = cfg.collision_kernel(), cfg.breakage_law(), cfg.make_grid()
    R = build_redistribution(grid, law)
    result = run_to_stationarity(_initial(cfg, grid), cfg.solver_config(), K, law, R)
    report = verify_profile(result.profile, K, law, R=R)
    result.diagnostics = report
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    write_field_csv(result.profile, out / "profile.csv", time=result.tau)
    _write_history(result.state, out / "history.csv")
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "report.txt").write_text(report.table() + "\n")
    _write_json(_manifest(
        cfg, "find-profile",
        converged=result.converged, residual=result.residual, iterations=result.iterations,
        tau=result.tau, mass_budget={"outflow": result.outflow_total, "clipped": result.clipped_mass,
                                     "final_M1_before_normalisation": result.state.field.moment(1.0)},
        verification_passed=report.passed,
    ), out / "manifest.json")
    print(f"residual {result.residual:.3e} after {result.iterations} steps (tau={result.tau:.4g})")
    print(report.table())
    if not result.converged:
        return EXIT_NONCONVERGED
    return EXIT_OK if report.passed else EXIT_VERIFY


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _load(args)
    sim = dict(cfg.simulate or {})
    mode = args.mode or sim.get("mode")
    if mode not in ("physical", "rescaled"):
        raise ConfigError("simulate needs mode physical or rescaled (config simulate.mode or --mode)")
    K, law, grid = cfg.collision_kernel(), cfg.breakage_law(), cfg.make_grid()
    scfg = cfg.solver_config()
    scfg.snapshot_every = int(sim.get("snapshot_every", 0))
    R = build_redistribution(grid, law)
    if args.resume:
        start, t0 = read_field_csv(args.resume)
        if not start.grid.same_as(grid):
            raise GridMismatchError("snapshot grid differs from the configured grid")
        t0 = t0 or 0.0
    else:
        start, t0 = _initial(cfg, grid), 0.0
    outputs = [float(t) for t in sim.get("output_times", [])]
    if mode == "physical":
        t_end = float(args.end if args.end is not None else sim.get("t_end", 100.0))
        state = simulate_physical(start, t_end, scfg, K, law, R, output_times=outputs, t0=t0)
    else:
        t_end = float(args.end if args.end is not None else sim.get("tau_end", scfg.tau_end))
        state = simulate_rescaled(start, t_end, scfg, K, law, R, output_times=outputs, tau0=t0)
    out = cfg.out_dir
    snap_dir = out / "snapshots"
    snap_dir.mkdir(parents=True, exist_ok=True)
    _write_history(state, out / "history.csv")
    for i, (t, values) in enumerate(state.snapshots):
        write_field_csv(DensityField(grid, values), snap_dir / f"snapshot_{i:05d}.csv", time=t)
    extra = {}
    if mode == "physical":
        if "profile" in sim:
            path = Path(sim["profile"])
            profile, _ = read_field_csv(path if path.is_absolute() else cfg.base_dir / path)
        else:
            profile = run_to_stationarity(initial_field(grid), scfg, K, law, R).profile
        with (out / "distance.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time", "distance"])
            for t, values in state.snapshots:
                if t > 0.0:
                    snap = EvolutionState(time=t, field=DensityField(grid, values))
                    writer.writerow([repr(t), repr(self_similar_distance(snap, profile, K))])
        extra["relative_mass_drift"] = abs(state.field.moment(1.0) / state.initial_mass - 1.0)
    _write_json(_manifest(cfg, f"simulate {mode}", steps=state.steps, end_time=state.time,
                          mass_budget={"initial": state.initial_mass, "final": state.field.moment(1.0),
                                       "outflow": state.outflow_total, "clipped": state.clipped_mass},
                          **extra), out / "manifest.json")
    print(f"{mode} run: {state.steps} steps to {state.time:.6g}, "
          f"{len(state.snapshots)} snapshots in {snap_dir}")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    cfg = _load(args)
    K, law, grid = cfg.collision_kernel(), cfg.breakage_law(), cfg.make_grid()
    profile, _ = read_field_csv(args.profile)
    if not profile.grid.same_as(grid):
        raise GridMismatchError(f"profile grid ({profile.grid.n} cells on [{profile.grid.xmin:g}, "
                                f"{profile.grid.xmax:g}]) differs from the configured grid")
    report = verify_profile(profile, K, law, tol=args.tol)
    print(report.table())
    for c in report.failures:
        if c.note:
            print(f"{c.name}: {c.note}")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "report.json").write_text(report.to_json() + "\n")
    return EXIT_OK if report.passed else EXIT_VERIFY


def oracle_compare(cfg: RunConfig, n: int, fields: int = 100, ladder: Sequence[int] = (16, 32, 64)) -> dict:
    """Agreement of the sectional operator with the brute-force quadrature on random fields."""
    if n > MAX_ORACLE_CELLS:
        raise ConfigError(f"oracle comparison is quadratic in the cell count; n={n} exceeds {MAX_ORACLE_CELLS}")
    K, law = cfg.collision_kernel(), cfg.breakage_law()
    g = cfg.grid
    grid = make_geometric_grid(float(g["xmin"]), float(g["xmax"]), n)
    R = build_redistribution(grid, law)
    rng = np.random.default_rng(cfg.seed)
    loss_err = 0.0
    for _ in range(fields):
        u = DensityField(grid, rng.random(n))
        fast = collision_parts(u, K, R).loss.values
        slow = brute_force_parts(u, K, law).loss.values
        loss_err = max(loss_err, float(np.max(np.abs(fast - slow) / np.maximum(np.abs(slow), 1e-300))))
    factors = gain_renormalization(grid, law)
    rows = []
    for m in ladder:
        gm = make_geometric_grid(float(g["xmin"]), float(g["xmax"]), m)
        fm = gain_renormalization(gm, law)
        um = DensityField(gm, np.random.default_rng(cfg.seed).random(m))
        rows.append({"cells": m, "max_factor_minus_one": float(np.nanmax(np.abs(fm - 1.0))),
                     "oracle_mass_defect": oracle_mass_defect(um, K, law)})
    return {"cells": n, "fields": fields, "seed": cfg.seed, "loss_max_relative_error": loss_err,
            "factor_minus_one": [None if np.isnan(f) else float(f - 1.0) for f in factors],
            "max_factor_minus_one": float(np.nanmax(np.abs(factors - 1.0))), "ladder": rows}


def cmd_oracle_compare(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    n = args.cells if args.cells is not None else 32
    result = oracle_compare(cfg, n, fields=args.fields)
    print(f"loss terms: max relative difference {result['loss_max_relative_error']:.3e} over {args.fields} fields")
    print(f"gain renormalization factor: max |factor - 1| = {result['max_factor_minus_one']:.4g} at n={n}")
    for row in result["ladder"]:
        print(f"  n={row['cells']:3d}  max|factor-1|={row['max_factor_minus_one']:.4g}  "
              f"oracle mass defect={row['oracle_mass_defect']:.4g}")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        _write_json(_manifest(cfg, "oracle-compare", **result), args.out / "oracle.json")
    return EXIT_OK if result["loss_max_relative_error"] <= 1e-12 else EXIT_VERIFY


def cmd_emit_analytic(args: argparse.Namespace) -> int:
    if args.config:
        cfg = load_config(args.config).with_overrides(cells=args.cells)
        grid = cfg.make_grid()
    else:
        grid = make_geometric_grid(1e-4, 40.0, args.cells or 512)
    profile = DensityField(grid, reference_profile(grid.centers)).normalized()
    out = args.out or Path(".")
    out.mkdir(parents=True, exist_ok=True)
    write_field_csv(profile, out / "analytic_profile.csv")
    print(f"wrote {out / 'analytic_profile.csv'} ({grid.n} cells)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="breakage-profiles",
                                     description="Self-similar profiles of collision-induced breakage")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", type=Path, required=config_required, help="YAML run configuration")
        p.add_argument("--out", type=Path, default=None, help="output directory (overrides output.directory)")
        p.add_argument("--cells", type=int, default=None, help="override grid.cells")
        p.add_argument("--tol", type=float, default=None, help="override the stationarity or check tolerance")

    p = sub.add_parser("find-profile", help="march the rescaled equation to a stationary profile")
    common(p)
    p.set_defaults(func=cmd_find_profile)

    p = sub.add_parser("simulate", help="time series in physical or rescaled variables")
    common(p)
    p.add_argument("--mode", choices=("physical", "rescaled"), default=None)
    p.add_argument("--end", type=float, default=None, help="final t (physical) or tau (rescaled)")
    p.add_argument("--resume", type=Path, default=None, help="snapshot CSV to continue from")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="run every profile check on a profile CSV")
    common(p)
    p.add_argument("--profile", type=Path, required=True)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("oracle-compare", help="compare against brute-force quadrature on small grids")
    common(p)
    p.add_argument("--fields", type=int, default=100, help="number of random fields")
    p.set_defaults(func=cmd_oracle_compare)

    p = sub.add_parser("emit-analytic", help="write 4 exp(-2x) normalised on the grid")
    common(p, config_required=False)
    p.set_defaults(func=cmd_emit_analytic)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DomainError, GridMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StiffnessError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())
