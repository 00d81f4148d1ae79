"""Residual-measure structure checks and refinement statistics."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .flow import Trajectory
from .grid import DiscreteOperator, Grid, norm, stencil_neighbourhood
from .obstacles import ObstaclePair
from .stepper import StepResult


@dataclass
class StructureTolerances:
    sign: float = 1e-8
    support: float = 1e-8
    coincidence: float = 1e-8


@dataclass
class StepMeasure:
    signed_mass: float
    total_variation: float
    pos_part_mass: float
    neg_part_mass: float
    lower_sign_violations: int
    upper_sign_violations: int
    min_mu_lower: float
    max_mu_upper: float
    off_support_max: float
    off_support_violations: int
    coincidence_error: float
    coincidence_error_edge: float
    coincidence_exact: bool

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class MeasureReport:
    steps: list[StepMeasure]
    tau: float
    T: float
    E0: float
    cumulative_tv2: float
    cumulative_signed2: float
    bound_rhs: float
    C_report: float
    sup_bilaplacian_f: float

    @property
    def max_off_support(self) -> float:
        return max((s.off_support_max for s in self.steps), default=0.0)

    @property
    def max_coincidence_error(self) -> float:
        vals = [s.coincidence_error for s in self.steps if not np.isnan(s.coincidence_error)]
        return max(vals, default=float("nan"))

    @property
    def sign_violations(self) -> int:
        return sum(s.lower_sign_violations + s.upper_sign_violations for s in self.steps)

    def as_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "steps"}
        out.update(max_off_support=self.max_off_support,
                   max_coincidence_error=self.max_coincidence_error,
                   sign_violations=self.sign_violations,
                   steps=[s.as_dict() for s in self.steps])
        return out


@dataclass
class RegularityReport:
    sup_second_differences: list[float]
    cumulative_d2: float
    holder_quarter: float
    holder_exponent: float = 0.25
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)


def residual_measure(B: DiscreteOperator, step: StepResult) -> np.ndarray:
    """Node densities of ``Bilap u + V``."""
    return B.matrix @ step.u_new + step.V


def _masses(grid: Grid, mu: np.ndarray):
    w = grid.cell_volume
    pos = w * float(np.sum(np.maximum(mu, 0.0)))
    neg = w * float(np.sum(np.maximum(-mu, 0.0)))
    return w * float(np.sum(mu)), pos + neg, pos, neg


def verify_structure(pair: ObstaclePair, step: StepResult, B: DiscreteOperator,
                     tols: StructureTolerances | None = None) -> StepMeasure:
    """Sign, support and coincidence checks for one step.

    ``pair`` is the unshifted obstacle pair (it defines the coincidence set);
    contact masks come from the step itself.  The coincidence identity is
    checked on nodes whose whole biharmonic stencil lies in the coincidence
    set; ``coincidence_error_edge`` reports the full set for information.
    """
    tols = tols or StructureTolerances()
    grid = pair.grid
    mu = residual_measure(B, step)
    signed, tv, pos, neg = _masses(grid, mu)
    omega0 = pair.coincidence_mask
    lower = step.lower_contact & ~omega0
    upper = step.upper_contact & ~omega0
    off = ~(step.lower_contact | step.upper_contact | omega0)
    min_lower = float(np.min(mu[lower])) if lower.any() else float("inf")
    max_upper = float(np.max(mu[upper])) if upper.any() else float("-inf")
    off_max = float(np.max(np.abs(mu[off]))) if off.any() else 0.0
    core = stencil_neighbourhood(B, omega0)
    diff = np.abs(mu - pair.bilaplacian_f)
    coin = float(np.max(diff[core])) if core.any() else float("nan")
    coin_edge = float(np.max(diff[omega0])) if omega0.any() else float("nan")
    exact = bool(np.all(step.u_new[omega0] == pair.f[omega0])) if omega0.any() else True
    return StepMeasure(
        signed_mass=signed,
        total_variation=tv,
        pos_part_mass=pos,
        neg_part_mass=neg,
        lower_sign_violations=int(np.sum(mu[lower] < -tols.sign)),
        upper_sign_violations=int(np.sum(mu[upper] > tols.sign)),
        min_mu_lower=min_lower,
        max_mu_upper=max_upper,
        off_support_max=off_max,
        off_support_violations=int(np.sum(np.abs(mu[off]) > tols.support)),
        coincidence_error=coin,
        coincidence_error_edge=coin_edge,
        coincidence_exact=exact,
    )


def accumulate_bounds(traj: Trajectory, B: DiscreteOperator, C_report: float = 1.0,
                      tols: StructureTolerances | None = None) -> MeasureReport:
    steps = [verify_structure(traj.pair, s, B, tols) for s in traj.step_results]
    tv = np.array([s.total_variation for s in steps])
    signed = np.array([s.signed_mass for s in steps])
    sup_bf = traj.pair.sup_bilaplacian_f_on_coincidence
    return MeasureReport(
        steps=steps,
        tau=traj.tau,
        T=traj.T,
        E0=traj.E0,
        cumulative_tv2=float(traj.tau * np.sum(tv**2)),
        cumulative_signed2=float(traj.tau * np.sum(signed**2)),
        bound_rhs=C_report * traj.E0 + traj.T * sup_bf**2,
        C_report=C_report,
        sup_bilaplacian_f=sup_bf,
    )


def second_differences(grid: Grid, u) -> np.ndarray:
    """Per-node max |second difference| on interior and boundary nodes.

    Axis-aligned and mixed (four-point) central differences; values outside
    the boundary come from even reflection, which encodes the zero normal
    derivative.
    """
    ring = grid.with_ring(u)
    ext = np.pad(ring, 1, mode="reflect")
    h = grid.spacing
    core = tuple(slice(1, -1) for _ in range(grid.dimension))
    out = np.zeros(ring.shape)
    for a in range(grid.dimension):
        plus = np.roll(ext, -1, axis=a)[core]
        minus = np.roll(ext, 1, axis=a)[core]
        out = np.maximum(out, np.abs(plus - 2.0 * ring + minus) / h[a] ** 2)
    if grid.dimension == 2:
        pp = np.roll(ext, (-1, -1), axis=(0, 1))[core]
        pm = np.roll(ext, (-1, 1), axis=(0, 1))[core]
        mp = np.roll(ext, (1, -1), axis=(0, 1))[core]
        mm = np.roll(ext, (1, 1), axis=(0, 1))[core]
        out = np.maximum(out, np.abs(pp - pm - mp + mm) / (4.0 * h[0] * h[1]))
    return out


def second_difference_sup(grid: Grid, u) -> float:
    return float(np.max(second_differences(grid, u)))


def holder_quotient(grid: Grid, times, states, alpha: float = 0.25) -> float:
    """``sup_{s != t} |u(t) - u(s)|_h / |t - s|^alpha`` over the given samples."""
    times = np.asarray(times, dtype=float)
    U = np.asarray(states)
    best = 0.0
    w = np.sqrt(grid.cell_volume)
    for i in range(1, len(times)):
        d = w * np.linalg.norm(U[i] - U[:i], axis=1)
        q = d / np.abs(times[i] - times[:i]) ** alpha
        best = max(best, float(np.max(q)))
    return best


def regularity_report(traj: Trajectory, alpha: float = 0.25) -> RegularityReport:
    sups = [second_difference_sup(traj.grid, u) for u in traj.states[1:]]
    return RegularityReport(
        sup_second_differences=sups,
        cumulative_d2=float(traj.tau * np.sum(np.square(sups))),
        holder_quarter=holder_quotient(traj.grid, traj.times, traj.states, alpha),
        holder_exponent=alpha,
    )


def max_gap_at_shared_times(coarse: Trajectory, fine: Trajectory) -> float:
    """Max h-norm difference at the coarse trajectory's node times."""
    ratio = fine.n // coarse.n
    if ratio * coarse.n != fine.n:
        raise ValueError("fine step count must be a multiple of the coarse one")
    return max(norm(coarse.grid, coarse.states[i] - fine.states[ratio * i])
               for i in range(coarse.n + 1))
