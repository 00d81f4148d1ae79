"""Exhaustive active-set enumeration for tiny box-constrained steps.

Independent of the production solvers: dense matrices, a hand-written
full-pivoting elimination and brute force over every labelling of the
nodes as lower / free / upper.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .grid import DiscreteOperator, Grid
from .obstacles import ObstaclePair

LOWER, FREE, UPPER = "lower", "free", "upper"
MAX_NODES = 7

TOO_LARGE = "TOO_LARGE"
NO_CANDIDATE = "NO_CANDIDATE"


class OracleError(RuntimeError):
    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


@dataclass
class OracleSolution:
    u: np.ndarray
    node_states: tuple[str, ...]
    multipliers: np.ndarray
    objective: float
    degenerate: bool = False
    passing: int = 1
    # objective of every feasible candidate, for exhaustive comparisons
    feasible_objectives: tuple[float, ...] = ()


def solve_full_pivot(M: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Gaussian elimination with complete pivoting; ``r`` may hold several columns."""
    M = np.array(M, dtype=float)
    r = np.array(r, dtype=float)
    vector = r.ndim == 1
    if vector:
        r = r[:, None]
    n = M.shape[0]
    cols = np.arange(n)
    for k in range(n):
        sub = np.abs(M[k:, k:])
        i, j = np.unravel_index(np.argmax(sub), sub.shape)
        i += k
        j += k
        if M[i, j] == 0.0:
            raise np.linalg.LinAlgError("singular reduced system")
        M[[k, i]] = M[[i, k]]
        r[[k, i]] = r[[i, k]]
        M[:, [k, j]] = M[:, [j, k]]
        cols[[k, j]] = cols[[j, k]]
        factors = M[k + 1:, k] / M[k, k]
        M[k + 1:, k:] -= np.outer(factors, M[k, k:])
        r[k + 1:] -= np.outer(factors, r[k])
    y = np.zeros_like(r)
    for k in range(n - 1, -1, -1):
        y[k] = (r[k] - M[k, k + 1:] @ y[k + 1:]) / M[k, k]
    x = np.zeros_like(r)
    x[cols] = y
    return x[:, 0] if vector else x


def enumerate_step(grid: Grid, B: DiscreteOperator, pair: ObstaclePair, u_prev, tau: float,
                   tol: float = 1e-9) -> OracleSolution:
    """Certify the step minimiser by trying all 3^N node labellings.

    Nodes where ``f == g`` only take the label ``lower``; their multiplier is
    unconstrained in sign.  ``tol`` is relative to the size of the data.
    """
    n = grid.size
    if n > MAX_NODES:
        raise OracleError(TOO_LARGE, f"{n} nodes, the oracle handles at most {MAX_NODES}")
    u_prev = grid.check(u_prev)
    A = B.toarray() + np.eye(n) / tau
    b = u_prev / tau
    f, g = np.asarray(pair.f), np.asarray(pair.g)
    pinned = f == g
    scale = 1.0 + np.max(np.abs(A)) * max(np.max(np.abs(f)), np.max(np.abs(g))) + np.max(np.abs(b))
    ptol = tol * (1.0 + max(np.max(np.abs(f)), np.max(np.abs(g))))
    dtol = tol * scale

    labels_all = np.array(
        list(itertools.product(*[(LOWER,) if pinned[j] else (LOWER, FREE, UPPER)
                                 for j in range(n)])))
    U = np.where(labels_all == LOWER, f, np.where(labels_all == UPPER, g, 0.0))
    # candidates sharing a free set share the reduced matrix
    free_sets = labels_all == FREE
    keys = np.packbits(free_sets, axis=1, bitorder="little")
    _, group = np.unique(keys, axis=0, return_inverse=True)
    for gid in np.unique(group):
        members = np.flatnonzero(group == gid)
        free = free_sets[members[0]]
        if free.any():
            fixed = ~free
            rhs = b[free][:, None] - A[np.ix_(free, fixed)] @ U[np.ix_(members, fixed)].T
            U[np.ix_(members, free)] = solve_full_pivot(A[np.ix_(free, free)], rhs).T

    feasible = np.all((U >= f - ptol) & (U <= g + ptol), axis=1)
    U = U[feasible]
    labels_all = labels_all[feasible]
    objs = 0.5 * np.einsum("ki,ij,kj->k", U, A, U) - U @ b
    lam = U @ A - b
    lower = (labels_all == LOWER) & ~pinned
    ok = np.all(np.where(lower, lam >= -dtol, True) & np.where(labels_all == UPPER, lam <= dtol, True),
                axis=1)
    # lexicographic label order decides which degenerate candidate comes first
    passing = [(tuple(str(x) for x in labels_all[k]), U[k], lam[k], objs[k])
               for k in np.flatnonzero(ok)]
    feasible_objs = objs.tolist()
    if not passing:
        raise OracleError(NO_CANDIDATE, "no labelling satisfies the KKT conditions")
    labels, u, lam, obj = passing[0]
    for _, other, _, _ in passing[1:]:
        if np.max(np.abs(other - u)) > 1e-10 * (1.0 + np.max(np.abs(u))):
            raise OracleError(NO_CANDIDATE, "passing labellings disagree on the minimiser")
    return OracleSolution(u, tuple(labels), lam, float(obj), degenerate=len(passing) > 1,
                          passing=len(passing), feasible_objectives=tuple(feasible_objs))


def step_objective(B: DiscreteOperator, u_prev, tau: float, u) -> float:
    """Density-form step objective, comparable with ``OracleSolution.objective``."""
    u = np.asarray(u, dtype=float)
    return float(0.5 * u @ (B.matrix @ u) + 0.5 * u @ u / tau - u_prev @ u / tau)
