"""Minimizing-movements trajectories and their time interpolants."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .grid import DiscreteOperator, Grid, norm, quadratic_energy
from .obstacles import ObstaclePair, project_to_box, shift_lower
from .stepper import StepError, StepOptions, StepResult, solve_step

DISSIPATION_TOL = 1e-9


@dataclass(eq=False)
class Trajectory:
    grid: Grid
    tau: float
    T: float
    states: list[np.ndarray]
    step_results: list[StepResult]
    E0: float
    cumulative_v2: list[float]
    pair: ObstaclePair
    options: StepOptions
    step_pair: ObstaclePair | None = None
    initial_projected: bool = False  # u0 was moved into the box
    initial_projection_gap: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.states) - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n + 1) * self.tau

    @property
    def velocities(self) -> list[np.ndarray]:
        return [s.V for s in self.step_results]

    def energies(self, B: DiscreteOperator) -> np.ndarray:
        return np.array([quadratic_energy(B, u) for u in self.states])


def validate_initial(pair: ObstaclePair, u0) -> tuple[np.ndarray, bool, float]:
    """Project ``u0`` onto the box; report whether that changed it and by how much."""
    u0 = pair.grid.check(u0)
    projected = project_to_box(pair, u0)
    gap = float(np.max(np.abs(projected - u0)))
    return projected, gap > 0.0, gap


def run_flow(grid: Grid, B: DiscreteOperator, pair: ObstaclePair, u0, T: float, n: int,
             opts: StepOptions, project_initial: bool = True) -> Trajectory:
    """March ``n`` implicit steps of size ``T/n`` from ``u0``.

    ``opts.tau`` is overridden by ``T/n``.  When the options carry a penalty
    with ``epsilon > 0`` the lower obstacle is shifted for every step.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not T > 0:
        raise ValueError("T must be positive")
    tau = T / n
    opts = replace(opts, tau=tau)
    u0, changed, gap = validate_initial(pair, u0) if project_initial else (grid.check(u0), False, 0.0)
    step_pair = shift_lower(pair, opts.epsilon, B) if opts.epsilon > 0 else pair

    states = [u0]
    results = []
    cumulative = [0.0]
    for i in range(1, n + 1):
        try:
            res = solve_step(grid, B, step_pair, states[-1], opts)
        except StepError as exc:
            exc.step = i
            exc.args = (f"step {i}: {exc.args[0]}",)
            raise
        states.append(res.u_new)
        results.append(res)
        cumulative.append(cumulative[-1] + tau * norm(grid, res.V) ** 2)
    return Trajectory(grid, tau, T, states, results, quadratic_energy(B, u0), cumulative,
                      pair, opts, step_pair, changed, gap)


def _interval(traj: Trajectory, t: float) -> tuple[int, bool]:
    """Index ``i`` with ``t`` in ((i-1) tau, i tau], and whether t is a node time."""
    s = t / traj.tau
    k = round(s)
    if abs(s - k) <= 1e-12 * max(1.0, abs(s)):
        return int(k), True
    return int(math.ceil(s)), False


def interpolate_linear(traj: Trajectory, t: float) -> np.ndarray:
    """Piecewise-linear interpolant; exact states at node times."""
    if not (0.0 <= t <= traj.T * (1 + 1e-12)):
        raise ValueError(f"t={t} outside [0, {traj.T}]")
    i, at_node = _interval(traj, t)
    i = min(max(i, 0), traj.n)
    if at_node:
        return traj.states[i].copy()
    prev = traj.states[i - 1]
    return prev + (t - (i - 1) * traj.tau) * traj.step_results[i - 1].V


def interpolate_constant(traj: Trajectory, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Right-continuous piecewise-constant state and velocity on ((i-1) tau, i tau]."""
    if not (0.0 < t <= traj.T * (1 + 1e-12)):
        raise ValueError(f"t={t} outside (0, {traj.T}]")
    i, _ = _interval(traj, t)
    i = min(max(i, 1), traj.n)
    return traj.states[i].copy(), traj.step_results[i - 1].V.copy()


def dissipation_report(traj: Trajectory, B: DiscreteOperator, tol: float = DISSIPATION_TOL) -> dict:
    energies = traj.energies(B)
    bound = 2.0 * traj.E0
    cum = np.asarray(traj.cumulative_v2)
    increases = [i for i in range(1, len(energies)) if energies[i] > energies[i - 1] + tol]
    # per step: E(u_i) + tau/2 |V_i|^2 <= E(u_{i-1})
    step_slack = [
        energies[i - 1] - energies[i] - 0.5 * traj.tau * norm(traj.grid, traj.step_results[i - 1].V) ** 2
        for i in range(1, len(energies))
    ]
    return {
        "E_series": energies.tolist(),
        "cumulative_v2": float(cum[-1]),
        "cumulative_v2_series": cum.tolist(),
        "sup_E": float(np.max(energies)),
        "bound_2E0": bound,
        "slack": float(bound - cum[-1]),
        "telescoped_bound": float(2.0 * (energies[0] - energies[-1])),
        "prefix_violations": [i for i in range(len(cum)) if cum[i] > bound + tol],
        "energy_increases": increases,
        "min_step_slack": float(min(step_slack)) if step_slack else 0.0,
    }
