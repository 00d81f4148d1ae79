"""Refinement studies: penalty strength, obstacle shift and time step."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from .diagnostics import (accumulate_bounds, max_gap_at_shared_times, regularity_report)
from .flow import Trajectory, dissipation_report, run_flow
from .grid import norm
from .obstacles import PenaltyParams, shift_lower
from .presets import Instance
from .stepper import CONSTRAINED, PENALIZED, StepOptions, solve_penalized


def _map(fn, items, workers):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _flag_monotone(values) -> list[bool]:
    """True where the value does not exceed its predecessor (first row always True)."""
    return [True] + [b <= a for a, b in zip(values, values[1:])]


def study_rho(inst: Instance, rhos, opts: StepOptions, epsilon: float = 0.0,
              workers: int = 1) -> tuple[list[dict], Trajectory]:
    """Penalized steps against the constrained trajectory, one row per rho.

    Every penalized step starts from the constrained state of the previous
    step, so each row measures the per-step penalty error in isolation.
    """
    rhos = [float(r) for r in rhos]
    if len(rhos) < 3 or any(b >= a for a, b in zip(rhos, rhos[1:])):
        raise ValueError("need at least three strictly decreasing rho values")
    base = replace(opts, method=CONSTRAINED, penalty=PenaltyParams(epsilon, rhos[0]))
    ref = run_flow(inst.grid, inst.B, inst.pair, inst.u0, inst.T, inst.n, base)
    pair = ref.step_pair
    grid = inst.grid

    def one(rho):
        popts = replace(ref.options, method=PENALIZED, penalty=PenaltyParams(epsilon, rho))
        gap = vlo = vhi = 0.0
        iters = []
        for i in range(1, ref.n + 1):
            res = solve_penalized(grid, inst.B, pair, ref.states[i - 1], popts)
            gap = max(gap, norm(grid, res.u_new - ref.states[i]))
            vlo = max(vlo, res.info["violation_lower"])
            vhi = max(vhi, res.info["violation_upper"])
            iters.append(res.iterations)
        bound = rho * ref.E0
        return {
            "rho": rho,
            "gap_to_constrained": gap,
            "violation_lower": vlo,
            "violation_upper": vhi,
            "bound_rhoE0": bound,
            "within_bound": max(vlo, vhi) <= bound,
            "newton_iterations_max": max(iters),
            "newton_iterations_total": int(sum(iters)),
        }

    rows = _map(one, rhos, workers)
    for row, ok in zip(rows, _flag_monotone([r["gap_to_constrained"] for r in rows])):
        row["gap_monotone"] = ok
    return rows, ref


def study_eps(inst: Instance, epsilons, opts: StepOptions, workers: int = 1,
              tol: float = 1e-9) -> tuple[list[dict], list[list[float]]]:
    """Max-norm gap between shifted and unshifted constrained trajectories.

    Returns the summary rows and, per epsilon, the gap at every step.
    """
    epsilons = [float(e) for e in epsilons]
    if len(epsilons) < 3 or any(b >= a for a, b in zip(epsilons, epsilons[1:])):
        raise ValueError("need at least three strictly decreasing epsilon values")
    base = replace(opts, method=CONSTRAINED, penalty=None)
    ref = run_flow(inst.grid, inst.B, inst.pair, inst.u0, inst.T, inst.n, base)
    coincidence = inst.pair.coincidence_mask

    def one(eps):
        shifted = shift_lower(inst.pair, eps, inst.B)
        tr = run_flow(inst.grid, inst.B, shifted, ref.states[0], inst.T, inst.n, base)
        gaps = [float(np.max(np.abs(a - b))) for a, b in zip(tr.states[1:], ref.states[1:])]
        upper_active = any(
            bool(np.any(s.upper_contact & ~coincidence)) or bool(np.any(r.upper_contact & ~coincidence))
            for s, r in zip(tr.step_results, ref.step_results)
        )
        # with Omega_0 nonempty both obstacles act there, so the simple bound is not implied
        lower_only = not upper_active and not coincidence.any()
        max_gap = max(gaps) if gaps else 0.0
        return {
            "epsilon": eps,
            "max_gap": max_gap,
            "final_step_gap": gaps[-1] if gaps else 0.0,
            "gap_le_eps": max_gap <= eps + tol,
            "lower_only": lower_only,
        }, gaps

    out = _map(one, epsilons, workers)
    rows = [r for r, _ in out]
    for row, ok in zip(rows, _flag_monotone([r["max_gap"] for r in rows])):
        row["gap_monotone"] = ok
    return rows, [g for _, g in out]


def study_tau(inst: Instance, n_list, opts: StepOptions, workers: int = 1,
              alpha: float = 0.25) -> tuple[list[dict], dict[int, Trajectory]]:
    """Trajectories for successive doublings of n, compared at shared node times."""
    n_list = [int(n) for n in n_list]
    if len(n_list) < 3 or any(b != 2 * a for a, b in zip(n_list, n_list[1:])):
        raise ValueError("n list must hold at least three successive doublings")
    trajs = dict(zip(n_list, _map(
        lambda n: run_flow(inst.grid, inst.B, inst.pair, inst.u0, inst.T, n, opts), n_list, workers)))
    rows = []
    for k, n in enumerate(n_list):
        tr = trajs[n]
        diss = dissipation_report(tr, inst.B)
        meas = accumulate_bounds(tr, inst.B)
        reg = regularity_report(tr, alpha)
        nxt = n_list[k + 1] if k + 1 < len(n_list) else None
        rows.append({
            "n": n,
            "tau": tr.tau,
            "gap_to_2n": max_gap_at_shared_times(tr, trajs[nxt]) if nxt else math.nan,
            "holder_quarter": reg.holder_quarter,
            "cumulative_tv2": meas.cumulative_tv2,
            "cumulative_signed2": meas.cumulative_signed2,
            "cumulative_d2": reg.cumulative_d2,
            "cumulative_v2": diss["cumulative_v2"],
            "bound_2E0": diss["bound_2E0"],
            "dissipation_ok": not diss["prefix_violations"],
        })
    gaps = [r["gap_to_2n"] for r in rows[:-1]]
    for row, ok in zip(rows, _flag_monotone(gaps) + [True]):
        row["gap_decreasing"] = ok
    return rows, trajs


def ratio_spread(values) -> float:
    """max/min of a positive series (1.0 for an all-zero series)."""
    values = np.asarray(values, dtype=float)
    if np.all(values == 0):
        return 1.0
    return float(np.max(values) / np.min(values))


def max_successive_ratio(values) -> float:
    """Largest ratio between neighbouring entries, in either direction."""
    values = np.asarray(values, dtype=float)
    worst = 1.0
    for a, b in zip(values, values[1:]):
        if a == 0 and b == 0:
            continue
        worst = max(worst, max(a, b) / min(a, b) if min(a, b) > 0 else math.inf)
    return worst
