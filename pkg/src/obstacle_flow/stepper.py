"""One implicit time step of the two-obstacle biharmonic flow.

Both step problems minimise (in density form, i.e. divided by h^d)

    q(u) = 1/2 u^T (B + I/tau) u - u_prev^T u / tau

over the box ``f <= u <= g`` (constrained) or with the one-sided quadratic
penalties added (penalized).  The multiplier of the box constraint is
``mu = B u + (u - u_prev)/tau``, the discrete residual measure density.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import DiscreteOperator, Grid, quadratic_energy
from .obstacles import ObstaclePair, PenaltyParams

log = logging.getLogger(__name__)

NO_CONVERGENCE = "NO_CONVERGENCE"
INFEASIBLE = "INFEASIBLE"
RHO_NONPOSITIVE = "RHO_NONPOSITIVE"

CONSTRAINED = "constrained"
PENALIZED = "penalized"


class StepError(RuntimeError):
    """Step failure; ``best`` holds the best iterate when one exists."""

    def __init__(self, code: str, message: str, best=None, residual=float("nan"), step=None):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.best = best
        self.residual = residual
        self.step = step


@dataclass(frozen=True)
class StepOptions:
    tau: float
    method: str = CONSTRAINED
    penalty: PenaltyParams | None = None
    tol_kkt: float = 1e-10
    tol_newton: float = 1e-11
    max_iter: int = 200
    active_tol: float = 1e-9

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.method not in (CONSTRAINED, PENALIZED):
            raise ValueError(f"unknown method {self.method!r}")
        if self.method == PENALIZED and self.penalty is None:
            raise ValueError("penalized method needs penalty parameters")
        if min(self.tol_kkt, self.tol_newton, self.active_tol) <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")

    @property
    def epsilon(self) -> float:
        return 0.0 if self.penalty is None else self.penalty.epsilon


@dataclass(eq=False)
class StepResult:
    u_new: np.ndarray
    V: np.ndarray
    mu: np.ndarray
    lower_contact: np.ndarray
    upper_contact: np.ndarray
    iterations: int
    kkt_residual: float
    energy_before: float
    energy_after: float
    method: str = CONSTRAINED
    fallback_used: bool = False
    info: dict = field(default_factory=dict)


# --- penalty functions -----------------------------------------------------

def gamma(lam, rho):
    """One-sided quadratic penalty: lam^2/rho for lam < 0, else 0."""
    if not rho > 0:
        raise StepError(RHO_NONPOSITIVE, f"rho must be positive, got {rho}")
    lam = np.asarray(lam, dtype=float)
    out = np.where(lam < 0, lam * lam / rho, 0.0)
    return out if out.ndim else float(out)


def beta(lam, rho):
    """Derivative of :func:`gamma`; 0 at the kink."""
    if not rho > 0:
        raise StepError(RHO_NONPOSITIVE, f"rho must be positive, got {rho}")
    lam = np.asarray(lam, dtype=float)
    out = np.where(lam < 0, 2.0 * lam / rho, 0.0)
    return out if out.ndim else float(out)


def classify_contacts(pair: ObstaclePair, u, active_tol: float = 1e-9):
    u = pair.grid.check(u)
    return (u - pair.f <= active_tol), (pair.g - u <= active_tol)


# --- box-constrained QP ----------------------------------------------------

@dataclass
class BoxQPResult:
    x: np.ndarray
    multiplier: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    iterations: int
    residual: float
    converged: bool
    fallback_used: bool


def kkt_residual(x, lam, lo, hi, lower, upper, pinned=None) -> float:
    """Max-norm violation of stationarity, dual signs and primal feasibility.

    ``lower``/``upper`` mark nodes treated as sitting on the respective bound;
    pinned nodes (lo == hi) carry an unconstrained multiplier.
    """
    free = ~(lower | upper)
    parts = [0.0]
    if pinned is not None:
        free &= ~pinned
        lower = lower & ~pinned
        upper = upper & ~pinned
    if free.any():
        parts.append(np.max(np.abs(lam[free])))
    if lower.any():
        parts.append(np.max(np.maximum(-lam[lower], 0.0)))
        parts.append(np.max(np.abs(x[lower] - lo[lower])))
    if upper.any():
        parts.append(np.max(np.maximum(lam[upper], 0.0)))
        parts.append(np.max(np.abs(x[upper] - hi[upper])))
    parts.append(np.max(np.maximum(lo - x, 0.0)))
    parts.append(np.max(np.maximum(x - hi, 0.0)))
    return float(max(parts))


def _roundoff_floor(A, x, b) -> float:
    """Residual level reachable in double precision at ``x``."""
    row_sum = np.asarray(abs(A).sum(axis=1)).ravel()
    return 64.0 * np.finfo(float).eps * (float(np.max(row_sum)) * float(np.max(np.abs(x)))
                                         + float(np.max(np.abs(b))))


def _solve_on_free(A, b, x, free):
    """Fix non-free entries of ``x`` and solve the reduced system for the rest."""
    x = x.copy()
    if free.any():
        fixed = ~free
        rhs = b[free] - A[free][:, fixed] @ x[fixed]
        Aff = sp.csc_matrix(A[free][:, free])
        lu = spla.splu(Aff)
        xf = lu.solve(rhs)
        # one step of iterative refinement
        xf += lu.solve(rhs - Aff @ xf)
        x[free] = xf
    return x


def solve_box_qp(A, b, lo, hi, x0=None, tol=1e-10, max_iter=200) -> BoxQPResult:
    """Minimise ``1/2 x^T A x - b^T x`` over ``lo <= x <= hi`` for SPD sparse ``A``.

    Primal-dual active set iteration; on a repeated active-set pair (cycling)
    or exhaustion it switches to a monotone projected Newton method.
    """
    A = sp.csr_matrix(A)
    n = A.shape[0]
    pinned = lo == hi
    c = A.diagonal()
    x = np.clip(np.zeros(n) if x0 is None else np.asarray(x0, dtype=float), lo, hi)
    x[pinned] = lo[pinned]
    lam = A @ x - b
    seen = set()
    prev = None
    for it in range(1, max_iter + 1):
        lower = ((lam + c * (lo - x)) > 0) | pinned
        upper = ((lam + c * (hi - x)) < 0) & ~lower
        key = (lower.tobytes(), upper.tobytes())
        if key in seen and key != prev:
            log.debug("active-set cycle after %d iterations, switching to projected Newton", it)
            return _projected_newton(A, b, lo, hi, x, tol, max_iter, it)
        seen.add(key)
        x = np.where(lower, lo, np.where(upper, hi, x))
        x = _solve_on_free(A, b, x, ~(lower | upper))
        lam = A @ x - b
        res = kkt_residual(x, lam, lo, hi, lower, upper, pinned)
        floor = _roundoff_floor(A, x, b)
        if res <= tol or (key == prev and res <= max(tol, floor)):
            return BoxQPResult(x, lam, lower, upper, it, res, True, False)
        prev = key
    return _projected_newton(A, b, lo, hi, x, tol, max_iter, max_iter)


def _projected_newton(A, b, lo, hi, x, tol, max_iter, it0) -> BoxQPResult:
    pinned = lo == hi
    d_inv = 1.0 / A.diagonal()
    x = np.clip(x, lo, hi)

    def q(v):
        return 0.5 * v @ (A @ v) - b @ v

    qx = q(x)
    res = np.inf
    lower = upper = np.zeros_like(pinned)
    for it in range(it0, it0 + max_iter):
        grad = A @ x - b
        pg = x - np.clip(x - d_inv * grad, lo, hi)
        width = min(1e-3, float(np.max(np.abs(pg))) if len(pg) else 0.0)
        lower = ((x - lo <= width) & (grad > 0)) | pinned
        upper = (hi - x <= width) & (grad < 0) & ~lower
        on_lo = (x == lo) & ~upper
        on_hi = (x == hi) & ~on_lo
        res = kkt_residual(x, grad, lo, hi, on_lo, on_hi, pinned)
        if res <= max(tol, _roundoff_floor(A, x, b)):
            return BoxQPResult(x, grad, on_lo | pinned, on_hi, it, res, True, True)
        free = ~(lower | upper)
        d = -d_inv * grad
        if free.any():
            Aff = sp.csc_matrix(A[free][:, free])
            d[free] = spla.spsolve(Aff, -grad[free])
        alpha = 1.0
        while alpha >= 2.0**-30:
            xn = np.clip(x + alpha * d, lo, hi)
            qn = q(xn)
            if qn <= qx and qx - qn >= 1e-4 * (grad @ (x - xn)):
                break
            alpha *= 0.5
        else:
            break
        x, qx = xn, qn
    grad = A @ x - b
    on_lo = (x == lo) | pinned
    on_hi = (x == hi) & ~on_lo
    res = kkt_residual(x, grad, lo, hi, on_lo, on_hi, pinned)
    return BoxQPResult(x, grad, on_lo, on_hi, it0 + max_iter, res, res <= tol, True)


# --- step solvers ----------------------------------------------------------

def _system(B: DiscreteOperator, tau: float):
    n = B.shape[0]
    return sp.csr_matrix(B.matrix + sp.identity(n, format="csr") / tau)


def _finish(grid, B, pair, u_prev, u_new, opts, iterations, residual, method, fallback, info):
    V = (u_new - u_prev) / opts.tau
    mu = B.matrix @ u_new + V
    lower, upper = classify_contacts(pair, u_new, opts.active_tol)
    return StepResult(
        u_new=u_new,
        V=V,
        mu=mu,
        lower_contact=lower,
        upper_contact=upper,
        iterations=iterations,
        kkt_residual=residual,
        energy_before=quadratic_energy(B, u_prev),
        energy_after=quadratic_energy(B, u_new),
        method=method,
        fallback_used=fallback,
        info=info,
    )


def solve_constrained(grid: Grid, B: DiscreteOperator, pair: ObstaclePair, u_prev,
                      opts: StepOptions) -> StepResult:
    """Minimiser of energy plus proximal term over the box ``[f, g]``."""
    u_prev = grid.check(u_prev)
    if np.any(pair.f > pair.g):
        raise StepError(INFEASIBLE, "obstacle pair has f > g")
    gap = max(float(np.max(pair.f - u_prev)), float(np.max(u_prev - pair.g)))
    if gap > opts.active_tol:
        raise StepError(INFEASIBLE, f"previous state leaves the box by {gap:.3e}")
    A = _system(B, opts.tau)
    b = u_prev / opts.tau
    x0 = np.clip(u_prev, pair.f, pair.g)
    res = solve_box_qp(A, b, pair.f, pair.g, x0=x0, tol=opts.tol_kkt, max_iter=opts.max_iter)
    if not res.converged:
        raise StepError(NO_CONVERGENCE, f"box QP residual {res.residual:.3e} after "
                        f"{res.iterations} iterations", best=res.x, residual=res.residual)
    return _finish(grid, B, pair, u_prev, res.x, opts, res.iterations, res.residual,
                   CONSTRAINED, res.fallback_used, {})


def penalized_objective(A, b, pair: ObstaclePair, rho: float, w) -> float:
    """Density-form penalized merit (omits the constant ``|u_prev|^2/(2 tau)``)."""
    return float(0.5 * w @ (A @ w) - b @ w
                 + np.sum(gamma(w - pair.f, rho)) + np.sum(gamma(pair.g - w, rho)))


def penalized_residual(A, b, pair: ObstaclePair, rho: float, w) -> np.ndarray:
    return A @ w - b + beta(w - pair.f, rho) - beta(pair.g - w, rho)


def solve_penalized(grid: Grid, B: DiscreteOperator, pair: ObstaclePair, u_prev,
                    opts: StepOptions) -> StepResult:
    """Solve ``B w + (w - u_prev)/tau + beta(w - f) - beta(g - w) = 0``.

    ``pair`` is used as given; shift the lower obstacle beforehand for the
    ``f - epsilon`` variant.  Damped semismooth Newton, backtracking on the
    convex penalized merit by halving down to 2**-30.
    """
    u_prev = grid.check(u_prev)
    if opts.penalty is None or not opts.penalty.rho > 0:
        raise StepError(RHO_NONPOSITIVE, "penalized step needs rho > 0")
    rho = opts.penalty.rho
    A = _system(B, opts.tau)
    b = u_prev / opts.tau
    n = grid.size
    w = u_prev.copy()
    phi = penalized_objective(A, b, pair, rho, w)
    r = penalized_residual(A, b, pair, rho, w)
    res = float(np.max(np.abs(r)))
    prev_pattern = None
    it = 0
    for it in range(1, opts.max_iter + 1):
        below = w - pair.f < 0
        above = pair.g - w < 0
        pattern = (below.tobytes(), above.tobytes())
        floor = _roundoff_floor(A + sp.diags((below | above) * (2.0 / rho)), w, b)
        if res <= opts.tol_newton or (pattern == prev_pattern and res <= floor):
            break
        prev_pattern = pattern
        J = A + sp.diags((below | above).astype(float) * (2.0 / rho), format="csr")
        d = spla.spsolve(sp.csc_matrix(J), -r)
        alpha = 1.0
        while True:
            wn = w + alpha * d
            phin = penalized_objective(A, b, pair, rho, wn)
            if phin <= phi or alpha < 2.0**-30:
                break
            alpha *= 0.5
        if alpha < 2.0**-30 and phin > phi:
            break
        w, phi = wn, phin
        r = penalized_residual(A, b, pair, rho, w)
        res = float(np.max(np.abs(r)))
    else:
        it = opts.max_iter
    floor = _roundoff_floor(A + sp.diags(np.full(n, 2.0 / rho)), w, b)
    if res > max(opts.tol_newton, floor):
        raise StepError(NO_CONVERGENCE, f"penalized Newton residual {res:.3e} after {it} "
                        "iterations", best=w, residual=res)
    viol_lo = np.maximum(pair.f - w, 0.0)
    viol_hi = np.maximum(w - pair.g, 0.0)
    info = {
        "violation_lower": grid.cell_volume * float(viol_lo @ viol_lo),
        "violation_upper": grid.cell_volume * float(viol_hi @ viol_hi),
        "penalty_energy": grid.cell_volume * float(np.sum(gamma(w - pair.f, rho))
                                                   + np.sum(gamma(pair.g - w, rho))),
    }
    return _finish(grid, B, pair, u_prev, w, opts, it, res, PENALIZED, False, info)


def solve_step(grid, B, pair, u_prev, opts: StepOptions) -> StepResult:
    if opts.method == PENALIZED:
        return solve_penalized(grid, B, pair, u_prev, opts)
    return solve_constrained(grid, B, pair, u_prev, opts)
