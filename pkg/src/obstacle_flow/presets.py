"""Built-in test instances.

Each preset supplies analytic ``f``, ``g`` and ``u0`` as functions of the
node coordinates (meshgrid arrays) and the domain extent.  Domains are sized
so that ``h`` stays O(0.1..0.3) at the default resolutions; this keeps the
biharmonic stencil entries O(10^3) and the multiplier densities well above
double-precision roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

DEFAULT_EXTENT = {1: 8.0, 2: 6.0}
DEFAULT_RESOLUTION = {1: 64, 2: 24}


def bump(r, width):
    """Smooth compactly supported bump ``exp(1 - 1/(1 - (r/width)^2))``, peak 1."""
    s = np.minimum(np.abs(r) / width, 1.0)
    inside = s < 1.0
    safe = np.where(inside, 1.0 - s * s, 1.0)
    return np.where(inside, np.exp(1.0 - 1.0 / safe), 0.0)


def plateau(r, flat, ramp):
    """Equal to 1 for ``r <= flat``, smooth ramp down to 0 at ``flat + ramp``."""
    r = np.abs(r)
    out = bump(r - flat, ramp)
    return np.where(r <= flat, 1.0, out)


def _distance(coords, extent, centre):
    return np.sqrt(sum((x - c * a) ** 2 for x, c, a in zip(coords, centre, extent)))


@dataclass(frozen=True)
class Preset:
    name: str
    description: str
    f: Callable
    g: Callable
    u0: Callable
    T: dict  # final time per dimension; 2D features evolve faster on the 2D domain
    n: int

    def sources(self, extent):
        ext = tuple(extent)
        return (lambda *c: self.f(c, ext), lambda *c: self.g(c, ext), lambda *c: self.u0(c, ext))


def _const(value):
    return lambda c, ext: np.full(np.shape(c[0]), float(value))


def _diffuse_u0(c, ext):
    d = len(c)
    centre = (0.5,) * d
    return bump(_distance(c, ext, centre), 0.35 * min(ext))


# pinch: f rises above 0 near one corner/quarter, g dips below 0 near the other;
# the decaying initial datum is pushed into both
def _pinch_centres(d):
    return ((0.25,), (0.75,)) if d == 1 else ((0.3, 0.3), (0.7, 0.7))


def _pinch_f(c, ext):
    lo, _ = _pinch_centres(len(c))
    return -1.0 + 1.5 * bump(_distance(c, ext, lo), 0.2 * min(ext))


def _pinch_g(c, ext):
    _, hi = _pinch_centres(len(c))
    return 1.0 - 1.5 * bump(_distance(c, ext, hi), 0.2 * min(ext))


def _pinch_u0(c, ext):
    lo, hi = _pinch_centres(len(c))
    w = 0.24 * min(ext)
    return 0.9 * bump(_distance(c, ext, lo), w) - 0.9 * bump(_distance(c, ext, hi), w)


# squeeze: f == g == phi on a centred band/disc (bitwise identical there)
def _squeeze_parts(c, ext):
    d = len(c)
    r = _distance(c, ext, (0.5,) * d)
    flat = 0.12 * min(ext)
    window = plateau(r, flat, 0.2 * min(ext))
    phi = 0.3 + 0.2 * np.cos(np.pi * r / flat) * (r <= flat) - 0.2 * (r > flat)
    return phi, window


def _squeeze_f(c, ext):
    phi, w = _squeeze_parts(c, ext)
    return np.where(w == 1.0, phi, phi * w - (1.0 - w))


def _squeeze_g(c, ext):
    phi, w = _squeeze_parts(c, ext)
    return np.where(w == 1.0, phi, phi * w + (1.0 - w))


def _squeeze_u0(c, ext):
    phi, w = _squeeze_parts(c, ext)
    return np.where(w == 1.0, phi, phi * w)


PRESETS = {
    "zero-start": Preset("zero-start", "u0 = 0 between constant obstacles -1 and 1",
                         _const(-1.0), _const(1.0), _const(0.0), T={1: 1.0, 2: 1.0}, n=16),
    "diffuse": Preset("diffuse", "smooth bump, obstacles far away (never active)",
                      _const(-10.0), _const(10.0), _diffuse_u0, T={1: 4.0, 2: 0.25}, n=64),
    "pinch": Preset("pinch", "decaying datum driven into both obstacles",
                    _pinch_f, _pinch_g, _pinch_u0, T={1: 4.0, 2: 0.25}, n=64),
    "squeeze": Preset("squeeze", "obstacles coincide on a centred band",
                      _squeeze_f, _squeeze_g, _squeeze_u0, T={1: 4.0, 2: 0.1}, n=64),
}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass(eq=False)
class Instance:
    grid: object
    L: object
    B: object
    pair: object
    u0: np.ndarray
    T: float
    n: int


def build_instance(name: str, dimension: int = 1, resolution=None, extent=None,
                   T: float | None = None, n: int | None = None) -> Instance:
    from .grid import assemble_biharmonic, assemble_laplacian, build_grid
    from .obstacles import sample_obstacles

    preset = get_preset(name)
    grid = build_grid(dimension, extent or DEFAULT_EXTENT[dimension],
                      resolution or DEFAULT_RESOLUTION[dimension])
    L = assemble_laplacian(grid)
    B = assemble_biharmonic(grid, L)
    f_src, g_src, u0_src = preset.sources(grid.extent)
    pair = sample_obstacles(grid, f_src, g_src, B)
    u0 = np.broadcast_to(u0_src(*grid.coordinates()), grid.shape).ravel().astype(float)
    return Instance(grid, L, B, pair, u0, T or preset.T[dimension], n or preset.n)
