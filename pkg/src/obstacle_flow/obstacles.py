"""Obstacle pairs ``f <= g``, their coincidence set and the lower-obstacle shift."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .grid import DiscreteOperator, Grid, GridError, assemble_biharmonic

FAIL_ORDER = "FAIL_ORDER"
FAIL_BOUNDARY = "FAIL_BOUNDARY"
FAIL_SHAPE = "FAIL_SHAPE"


class ObstacleError(ValueError):
    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


# analytic sources take meshgrid coordinate arrays and return values of the same shape
Source = Union[Callable[..., np.ndarray], np.ndarray]


@dataclass(frozen=True)
class PenaltyParams:
    epsilon: float = 0.0
    rho: float = 1e-4

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be nonnegative, got {self.epsilon}")


@dataclass(frozen=True, eq=False)
class ObstaclePair:
    grid: Grid
    f: np.ndarray
    g: np.ndarray
    coincidence_mask: np.ndarray
    bilaplacian_f: np.ndarray
    f_boundary: np.ndarray | None = None
    g_boundary: np.ndarray | None = None
    epsilon: float = 0.0

    @property
    def sup_bilaplacian_f_on_coincidence(self) -> float:
        if not self.coincidence_mask.any():
            return 0.0
        return float(np.max(np.abs(self.bilaplacian_f[self.coincidence_mask])))

    @property
    def boundary_checked(self) -> bool:
        return self.f_boundary is not None


def _build_pair(grid, f, g, f_bnd=None, g_bnd=None, B=None, epsilon=0.0) -> ObstaclePair:
    if B is None:
        B = assemble_biharmonic(grid)
    f = np.ascontiguousarray(f, dtype=float)
    g = np.ascontiguousarray(g, dtype=float)
    f.setflags(write=False)
    g.setflags(write=False)
    bf = B.matrix @ f
    bf.setflags(write=False)
    mask = f == g
    mask.setflags(write=False)
    return ObstaclePair(grid, f, g, mask, bf, f_bnd, g_bnd, epsilon)


def _validate(grid: Grid, f, g, f_bnd=None, g_bnd=None):
    if np.any(f > g):
        bad = int(np.argmax(f > g))
        raise ObstacleError(FAIL_ORDER, f"f > g at node {bad} ({f[bad]} > {g[bad]})")
    if f_bnd is not None:
        if np.any(f_bnd >= 0) or np.any(g_bnd <= 0):
            raise ObstacleError(FAIL_BOUNDARY, "need f < 0 < g at every boundary node")


def _ring_values(grid: Grid, source: Source, name: str) -> np.ndarray:
    if callable(source):
        values = np.asarray(source(*grid.coordinates(ring=True)), dtype=float)
        values = np.broadcast_to(values, grid.ring_shape())
    else:
        values = np.asarray(source, dtype=float)
    if values.shape != grid.ring_shape():
        raise ObstacleError(
            FAIL_SHAPE, f"{name}: expected values of shape {grid.ring_shape()}, got {values.shape}"
        )
    return values


def sample_obstacles(
    grid: Grid, f_source: Source, g_source: Source, B: DiscreteOperator | None = None
) -> ObstaclePair:
    """Sample and validate an obstacle pair.

    Sources are callables of the node coordinates (evaluated including the
    boundary ring) or arrays of ``grid.ring_shape()``.  Boundary-ring values
    are only used for the sign check ``f < 0 < g``.
    """
    f_ring = _ring_values(grid, f_source, "f")
    g_ring = _ring_values(grid, g_source, "g")
    bmask = grid.boundary_mask()
    f, g = grid.interior_of(f_ring), grid.interior_of(g_ring)
    f_bnd, g_bnd = f_ring[bmask], g_ring[bmask]
    _validate(grid, f, g, f_bnd, g_bnd)
    return _build_pair(grid, f, g, f_bnd, g_bnd, B)


def obstacles_from_interior(
    grid: Grid, f, g, B: DiscreteOperator | None = None
) -> ObstaclePair:
    """Pair from interior values only; the boundary sign check is skipped."""
    try:
        f, g = grid.check(f), grid.check(g)
    except GridError as exc:
        raise ObstacleError(FAIL_SHAPE, str(exc)) from None
    _validate(grid, f, g)
    return _build_pair(grid, f, g, B=B)


def shift_lower(pair: ObstaclePair, epsilon: float, B: DiscreteOperator | None = None) -> ObstaclePair:
    """Replace ``f`` by ``f - epsilon``."""
    if not epsilon >= 0:
        raise ValueError(f"epsilon must be nonnegative, got {epsilon}")
    if epsilon == 0:
        return pair
    f_bnd = None if pair.f_boundary is None else pair.f_boundary - epsilon
    return _build_pair(
        pair.grid, pair.f - epsilon, pair.g, f_bnd, pair.g_boundary, B, pair.epsilon + epsilon
    )


def project_to_box(pair: ObstaclePair, u) -> np.ndarray:
    """Componentwise median of ``(f, u, g)``: the nearest point of the box."""
    u = pair.grid.check(u)
    return np.minimum(np.maximum(u, pair.f), pair.g)
