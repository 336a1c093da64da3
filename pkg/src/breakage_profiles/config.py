"""YAML run configuration with fail-closed validation."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import ConfigError, DomainError
from .kernels import BreakageLaw, CollisionKernel, breakage_from_config
from .operator import Grid, make_geometric_grid
from .solver import SolverConfig

_BLOCKS = {
    "kernel": ({"lambda1", "lambda2"}, {"k0"}),
    "breakage": ({"variant"}, None),  # variant-specific keys are checked by the law factory
    "grid": ({"xmin", "xmax", "cells"}, set()),
    "solver": (set(), {"cfl", "stationarity_tol", "tau_end", "dt_max", "record_every", "dt_min"}),
    "output": (set(), {"directory", "formats"}),
    "initial": (set(), {"shape", "x0", "csv"}),
    "simulate": ({"mode"}, {"t_end", "tau_end", "snapshot_every", "output_times", "profile"}),
}
_REQUIRED_BLOCKS = {"kernel", "breakage", "grid"}
_FORMATS = {"csv", "json"}


@dataclass
class RunConfig:
    kernel: dict[str, Any]
    breakage: dict[str, Any]
    grid: dict[str, Any]
    solver: dict[str, Any] = field(default_factory=dict)
    output: dict[str, Any] = field(default_factory=dict)
    initial: dict[str, Any] = field(default_factory=lambda: {"shape": "exponential"})
    simulate: dict[str, Any] | None = None
    seed: int = 0
    base_dir: Path = field(default_factory=Path.cwd, repr=False)

    def __post_init__(self) -> None:
        # build everything once so constraint violations surface at load time
        try:
            self.collision_kernel()
            self.breakage_law()
            self.make_grid()
            self.solver_config()
        except DomainError as exc:
            raise ConfigError(str(exc)) from exc
        formats = set(self.output.get("formats", ["csv", "json"]))
        if not formats <= _FORMATS:
            raise ConfigError(f"unknown output formats {sorted(formats - _FORMATS)}")
        if self.simulate is not None and self.simulate["mode"] not in ("physical", "rescaled"):
            raise ConfigError(f"simulate.mode must be physical or rescaled, got {self.simulate['mode']!r}")

    def collision_kernel(self) -> CollisionKernel:
        k = self.kernel
        return CollisionKernel(float(k["lambda1"]), float(k["lambda2"]), float(k.get("k0", 0.0)))

    def breakage_law(self) -> BreakageLaw:
        return breakage_from_config(self.breakage, self.base_dir)

    def make_grid(self) -> Grid:
        g = self.grid
        cells = g["cells"]
        if isinstance(cells, bool) or not isinstance(cells, int):
            raise DomainError(f"grid.cells must be an integer, got {cells!r}")
        return make_geometric_grid(float(g["xmin"]), float(g["xmax"]), cells)

    def solver_config(self) -> SolverConfig:
        return SolverConfig(**{k: v for k, v in self.solver.items()})

    @property
    def out_dir(self) -> Path:
        d = Path(self.output.get("directory", "out"))
        return d if d.is_absolute() else self.base_dir / d

    def resolved(self) -> dict[str, Any]:
        """Parameter set with defaults filled in, for manifests."""
        data = {k: v for k, v in asdict(self).items() if k != "base_dir"}
        data["solver"] = asdict(self.solver_config())
        data["kernel"] = asdict(self.collision_kernel())
        return data

    def with_overrides(self, cells: int | None = None, tol: float | None = None,
                       out: Path | None = None) -> "RunConfig":
        grid = dict(self.grid, cells=cells) if cells is not None else self.grid
        solver = dict(self.solver, stationarity_tol=tol) if tol is not None else self.solver
        output = dict(self.output, directory=str(Path(out).resolve())) if out is not None else self.output
        return RunConfig(self.kernel, self.breakage, grid, solver, output, self.initial,
                         self.simulate, self.seed, self.base_dir)


def _check_block(name: str, block: Any) -> dict[str, Any]:
    if not isinstance(block, Mapping):
        raise ConfigError(f"block {name!r} must be a mapping")
    required, optional = _BLOCKS[name]
    missing = required - set(block)
    if missing:
        raise ConfigError(f"block {name!r} is missing {sorted(missing)}")
    if optional is not None:
        extra = set(block) - required - optional
        if extra:
            raise ConfigError(f"block {name!r} has unknown keys {sorted(extra)}")
    return dict(block)


def config_from_dict(data: Mapping[str, Any], base_dir: Path | None = None) -> RunConfig:
    if not isinstance(data, Mapping):
        raise ConfigError("configuration must be a mapping of blocks")
    unknown = set(data) - set(_BLOCKS) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown configuration blocks {sorted(unknown)}")
    missing = _REQUIRED_BLOCKS - set(data)
    if missing:
        raise ConfigError(f"missing configuration blocks {sorted(missing)}")
    blocks = {name: _check_block(name, data[name]) for name in _BLOCKS if name in data}
    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    return RunConfig(base_dir=base_dir or Path.cwd(), seed=seed, **blocks)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    return config_from_dict(data, base_dir=path.parent)
