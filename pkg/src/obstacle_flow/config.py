"""Run configuration: INI-style sections of ``key = value`` lines.

Grammar (all sections and keys optional; defaults in brackets)::

    [grid]
    dimension  = 1 | 2                    [1]
    extent     = float[, float]           [preset default: 8.0 in 1D, 6.0 in 2D]
    resolution = int[, int]               [64 in 1D, 24 in 2D]

    [problem]
    preset   = zero-start | diffuse | pinch | squeeze      [zero-start]
    f_file   = path     ; grid value files override the preset's f, g, u0
    g_file   = path     ; (f_file and g_file must be given together)
    u0_file  = path
    T        = float    [preset default]
    n        = int      [preset default]

    [solver]
    method     = constrained | penalized  [constrained]
    epsilon    = float                    [0]
    rho        = float                    [1e-4]
    tol_kkt    = float                    [1e-10]
    tol_newton = float                    [1e-11]
    max_iter   = int                      [200]
    active_tol = float                    [1e-9]

    [study]
    rho      = comma-separated floats     [1e-2, 1e-3, 1e-4, 1e-5, 1e-6]
    epsilon  = comma-separated floats     [1e-1, 1e-2, 1e-3, 1e-4]
    n        = comma-separated ints       [8, 16, 32, 64]
    workers  = int                        [4]
    instances = int (certify)             [200]

    [output]
    dir  = path                           [out]
    seed = int                            [0]

Relative file paths are resolved against the config file's directory.
``;`` and ``#`` start comments.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import assemble_biharmonic, assemble_laplacian, build_grid
from .gridio import read_grid_file
from .obstacles import PenaltyParams, sample_obstacles
from .presets import DEFAULT_EXTENT, DEFAULT_RESOLUTION, Instance, get_preset
from .stepper import StepOptions


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    dimension: int = 1
    extent: float | tuple | None = None
    resolution: int | tuple | None = None
    preset: str = "zero-start"
    f_file: Path | None = None
    g_file: Path | None = None
    u0_file: Path | None = None
    T: float | None = None
    n: int | None = None
    method: str = "constrained"
    epsilon: float = 0.0
    rho: float = 1e-4
    tol_kkt: float = 1e-10
    tol_newton: float = 1e-11
    max_iter: int = 200
    active_tol: float = 1e-9
    rho_list: list = field(default_factory=lambda: [1e-2, 1e-3, 1e-4, 1e-5, 1e-6])
    eps_list: list = field(default_factory=lambda: [1e-1, 1e-2, 1e-3, 1e-4])
    n_list: list = field(default_factory=lambda: [8, 16, 32, 64])
    workers: int = 4
    instances: int = 200
    out: Path = Path("out")
    seed: int = 0

    def step_options(self, tau: float = 1.0) -> StepOptions:
        penalty = None
        if self.method == "penalized" or self.epsilon > 0:
            penalty = PenaltyParams(self.epsilon, self.rho)
        return StepOptions(tau=tau, method=self.method, penalty=penalty, tol_kkt=self.tol_kkt,
                           tol_newton=self.tol_newton, max_iter=self.max_iter,
                           active_tol=self.active_tol)


def _floats(text):
    return [float(x) for x in text.replace(",", " ").split()]


_KEYS = {
    "grid": {"dimension": int, "extent": _floats, "resolution": lambda t: [int(x) for x in _floats(t)]},
    "problem": {"preset": str, "f_file": Path, "g_file": Path, "u0_file": Path, "T": float, "n": int},
    "solver": {"method": str, "epsilon": float, "rho": float, "tol_kkt": float, "tol_newton": float,
               "max_iter": int, "active_tol": float},
    "study": {"rho": _floats, "epsilon": _floats, "n": lambda t: [int(x) for x in _floats(t)],
              "workers": int, "instances": int},
    "output": {"dir": Path, "seed": int},
}

_FIELD = {("study", "rho"): "rho_list", ("study", "epsilon"): "eps_list", ("study", "n"): "n_list",
          ("output", "dir"): "out"}


def parse_config(text: str, base_dir: Path | None = None) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    cfg = RunConfig()
    for section in parser.sections():
        if section not in _KEYS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _KEYS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            try:
                value = _KEYS[section][key](raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from None
            if isinstance(value, Path) and base_dir is not None and not value.is_absolute():
                value = base_dir / value
            name = _FIELD.get((section, key), key)
            if name in ("extent", "resolution"):
                # one value applies to every axis
                value = value[0] if len(value) == 1 else tuple(value)
            setattr(cfg, name, value)
    _check(cfg)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text, path.parent)


def _check(cfg: RunConfig) -> None:
    if cfg.dimension not in (1, 2):
        raise ConfigError("dimension must be 1 or 2")
    if cfg.method not in ("constrained", "penalized"):
        raise ConfigError(f"unknown method {cfg.method!r}")
    if (cfg.f_file is None) != (cfg.g_file is None):
        raise ConfigError("f_file and g_file must be given together")
    if cfg.T is not None and not cfg.T > 0:
        raise ConfigError("T must be positive")
    if cfg.n is not None and cfg.n < 1:
        raise ConfigError("n must be >= 1")
    if not cfg.rho > 0:
        raise ConfigError("rho must be positive")
    if cfg.epsilon < 0:
        raise ConfigError("epsilon must be nonnegative")


def build_from_config(cfg: RunConfig) -> Instance:
    """Grid, operators, validated obstacles and initial datum for a config."""
    try:
        preset = get_preset(cfg.preset)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None
    d = cfg.dimension
    try:
        grid = build_grid(d, cfg.extent or DEFAULT_EXTENT[d], cfg.resolution or DEFAULT_RESOLUTION[d])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    L = assemble_laplacian(grid)
    B = assemble_biharmonic(grid, L)
    f_src, g_src, u0_src = preset.sources(grid.extent)
    try:
        if cfg.f_file is not None:
            f_src = read_grid_file(cfg.f_file, grid)[0]
            g_src = read_grid_file(cfg.g_file, grid)[0]
        pair = sample_obstacles(grid, f_src, g_src, B)
        if cfg.u0_file is not None:
            ring = read_grid_file(cfg.u0_file, grid)[0]
            if np.any(ring[grid.boundary_mask()] != 0):
                raise ConfigError(f"{cfg.u0_file}: initial datum must vanish on the boundary")
            u0 = grid.interior_of(ring)
        else:
            u0 = np.broadcast_to(u0_src(*grid.coordinates()), grid.shape).ravel().astype(float)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    T = cfg.T if cfg.T is not None else preset.T[d]
    n = cfg.n if cfg.n is not None else preset.n
    return Instance(grid, L, B, pair, u0, T, n)
