"""Uniform finite-difference grids with clamped boundary operators.

Grid functions are flat float arrays over the interior nodes, in row-major
(C) order of the interior multi-index.  Boundary nodes are not stored: their
values are identically zero.  The zero normal derivative is encoded by an
even-reflection ghost layer, which only contributes to the Laplacian
evaluated *on* the boundary ring.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class GridError(ValueError):
    """Invalid grid parameters or mis-sized grid function."""


@dataclass(frozen=True)
class Grid:
    dimension: int
    extent: tuple[float, ...]
    resolution: tuple[int, ...]
    spacing: tuple[float, ...] = field(init=False)

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise GridError(f"dimension must be 1 or 2, got {self.dimension}")
        if len(self.extent) != self.dimension or len(self.resolution) != self.dimension:
            raise GridError("extent and resolution need one entry per axis")
        if any(n < 3 for n in self.resolution):
            raise GridError(f"resolution must be >= 3 per axis, got {self.resolution}")
        if any(not (a > 0) for a in self.extent):
            raise GridError(f"extent must be positive, got {self.extent}")
        object.__setattr__(
            self, "spacing", tuple(a / (n + 1) for a, n in zip(self.extent, self.resolution))
        )

    @property
    def shape(self) -> tuple[int, ...]:
        return self.resolution

    @property
    def size(self) -> int:
        return int(np.prod(self.resolution))

    @property
    def cell_volume(self) -> float:
        """Quadrature weight h^d used by every inner product."""
        return float(np.prod(self.spacing))

    def flat_index(self, multi_index) -> int:
        return int(np.ravel_multi_index(tuple(multi_index), self.resolution))

    def multi_index(self, flat: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.unravel_index(flat, self.resolution))

    def axes(self, ring: bool = False) -> list[np.ndarray]:
        """Node coordinates per axis; with ``ring`` the boundary nodes are included."""
        out = []
        for a, n, h in zip(self.extent, self.resolution, self.spacing):
            if ring:
                out.append(np.arange(n + 2) * h)
            else:
                out.append(np.arange(1, n + 1) * h)
        return out

    def coordinates(self, ring: bool = False) -> list[np.ndarray]:
        """Meshgrid (``ij`` indexing) of node coordinates."""
        return list(np.meshgrid(*self.axes(ring), indexing="ij"))

    def ring_shape(self) -> tuple[int, ...]:
        return tuple(n + 2 for n in self.resolution)

    def boundary_mask(self) -> np.ndarray:
        """Boolean array of ``ring_shape`` marking boundary nodes."""
        mask = np.ones(self.ring_shape(), dtype=bool)
        mask[tuple(slice(1, -1) for _ in range(self.dimension))] = False
        return mask

    def interior_of(self, ring_values: np.ndarray) -> np.ndarray:
        """Flat interior values from an array of ``ring_shape``."""
        ring_values = np.asarray(ring_values, dtype=float)
        if ring_values.shape != self.ring_shape():
            raise GridError(f"expected shape {self.ring_shape()}, got {ring_values.shape}")
        return ring_values[tuple(slice(1, -1) for _ in range(self.dimension))].ravel().copy()

    def with_ring(self, u: np.ndarray) -> np.ndarray:
        """Embed an interior grid function into ``ring_shape`` with zero boundary."""
        u = self.check(u)
        out = np.zeros(self.ring_shape())
        out[tuple(slice(1, -1) for _ in range(self.dimension))] = u.reshape(self.shape)
        return out

    def check(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.size,):
            raise GridError(f"grid function must have shape ({self.size},), got {u.shape}")
        return u


def build_grid(dimension: int, extent, resolution) -> Grid:
    """Build a 1D interval or 2D rectangle; scalars are broadcast to every axis."""
    if dimension not in (1, 2):
        raise GridError(f"dimension must be 1 or 2, got {dimension}")
    extent = _per_axis(extent, dimension, float)
    resolution = _per_axis(resolution, dimension, int)
    return Grid(dimension, extent, resolution)


def _per_axis(value, dimension: int, kind) -> tuple:
    if np.isscalar(value):
        return (kind(value),) * dimension
    value = tuple(kind(v) for v in value)
    if len(value) != dimension:
        raise GridError(f"expected {dimension} per-axis values, got {len(value)}")
    return value


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Sparse symmetric operator on interior nodes.

    ``boundary_rows`` / ``boundary_weights`` are only set for the Laplacian:
    they hold its values on the boundary ring (from the ghost reflection)
    together with the trapezoid quadrature weight of each boundary node,
    relative to ``quadrature_weight``.
    """

    matrix: sp.csr_matrix
    quadrature_weight: float
    boundary_rows: sp.csr_matrix | None = None
    boundary_weights: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def __matmul__(self, u):
        return self.matrix @ u

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


def _second_difference(n: int, h: float) -> sp.csr_matrix:
    main = -2.0 * np.ones(n)
    off = np.ones(n - 1)
    return (sp.diags([off, main, off], [-1, 0, 1]) / h**2).tocsr()


def assemble_laplacian(grid: Grid) -> DiscreteOperator:
    """Central-difference Laplacian with clamped boundary treatment.

    Interior rows are the standard 3/5-point stencil with zero boundary
    values.  On a boundary node the ghost value equals the first interior
    value across the face, so the Laplacian there is ``2 u_adj / h^2``
    (tangential differences vanish because boundary values are zero).
    Corner nodes only see zero neighbours and are omitted.
    """
    n = grid.resolution
    h = grid.spacing
    if grid.dimension == 1:
        lap = _second_difference(n[0], h[0])
    else:
        ix, iy = sp.identity(n[0]), sp.identity(n[1])
        lap = sp.kron(_second_difference(n[0], h[0]), iy) + sp.kron(ix, _second_difference(n[1], h[1]))
    lap = sp.csr_matrix(lap)

    rows, cols, vals, weights = [], [], [], []
    r = 0
    for axis in range(grid.dimension):
        for adjacent in (0, n[axis] - 1):
            # each boundary node on this face sits next to one interior node
            face = [range(m) for m in n]
            face[axis] = [adjacent]
            for idx in np.ndindex(*[len(f) for f in face]):
                multi = tuple(face[k][idx[k]] for k in range(grid.dimension))
                rows.append(r)
                cols.append(grid.flat_index(multi))
                vals.append(2.0 / h[axis] ** 2)
                weights.append(0.5)
                r += 1
    boundary = sp.csr_matrix((vals, (rows, cols)), shape=(r, grid.size))
    return DiscreteOperator(lap, grid.cell_volume, boundary, np.asarray(weights))


def assemble_biharmonic(grid: Grid, laplacian: DiscreteOperator | None = None) -> DiscreteOperator:
    """Biharmonic operator ``B = L^T W L`` in density form.

    B is the gradient of the discrete energy with respect to the h^d-weighted
    inner product, so ``<B u, v>_h = <L u, L v>_W`` and ``E(u) = h^d/2 u^T B u``.
    """
    if laplacian is None:
        laplacian = assemble_laplacian(grid)
    lap = laplacian.matrix
    bnd = laplacian.boundary_rows
    bih = lap.T @ lap + bnd.T @ sp.diags(laplacian.boundary_weights) @ bnd
    bih = sp.csr_matrix(bih)
    bih = sp.csr_matrix(0.5 * (bih + bih.T))
    bih.sort_indices()
    return DiscreteOperator(bih, grid.cell_volume)


def laplacian_values(L: DiscreteOperator, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Laplacian on interior nodes and on the boundary ring."""
    return L.matrix @ u, L.boundary_rows @ u


def energy(grid: Grid, L: DiscreteOperator, u) -> float:
    """``E(u) = 1/2 * integral |Lap u|^2``, trapezoid weights on the boundary ring."""
    u = grid.check(u)
    inner_vals, ring_vals = laplacian_values(L, u)
    total = inner_vals @ inner_vals + ring_vals @ (L.boundary_weights * ring_vals)
    return 0.5 * grid.cell_volume * float(total)


def quadratic_energy(B: DiscreteOperator, u: np.ndarray) -> float:
    """Same energy evaluated through the biharmonic operator."""
    return 0.5 * B.quadrature_weight * float(u @ (B.matrix @ u))


def inner(grid: Grid, u, v) -> float:
    u, v = grid.check(u), grid.check(v)
    return grid.cell_volume * float(u @ v)


def norm(grid: Grid, u) -> float:
    return float(np.sqrt(inner(grid, u, u)))


def stencil_neighbourhood(B: DiscreteOperator, mask: np.ndarray) -> np.ndarray:
    """Nodes of ``mask`` whose whole B-stencil lies inside ``mask``."""
    mask = np.asarray(mask, dtype=bool)
    outside = (~mask).astype(float)
    pattern = B.matrix.copy()
    pattern.data = np.ones_like(pattern.data)
    touches_outside = (pattern @ outside) > 0
    return mask & ~touches_outside

