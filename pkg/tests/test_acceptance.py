"""Exit criteria.  Each test records one PASS/FAIL line at the stated tolerance."""

import time

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from obstacle_flow.cli import certify
from obstacle_flow.diagnostics import StructureTolerances, accumulate_bounds
from obstacle_flow.flow import dissipation_report, run_flow
from obstacle_flow.obstacles import PenaltyParams
from obstacle_flow.presets import PRESETS, build_instance
from obstacle_flow.stepper import StepOptions
from obstacle_flow.studies import max_successive_ratio, ratio_spread, study_eps, study_rho, study_tau

from conftest import report

pytestmark = pytest.mark.acceptance

CONSTRAINED = StepOptions(tau=1.0)
TOL = 1e-8


def trajectory(name, dim, n=64, opts=CONSTRAINED, **kw):
    inst = build_instance(name, dim, n=n, **kw)
    return inst, run_flow(inst.grid, inst.B, inst.pair, inst.u0, inst.T, inst.n, opts)


def test_oracle_equivalence():
    start = time.perf_counter()
    rows = certify(200, seed=20261016)
    elapsed = time.perf_counter() - start
    max_err = max(r["max_error"] for r in rows)
    mismatched = [r["instance"] for r in rows if not r["active_sets_equal"] and not r["degenerate"]]
    degenerate = sum(r["degenerate"] for r in rows)
    sizes = {r["nodes"] for r in rows}
    taus = [r["tau"] for r in rows]
    ok = (max_err <= 1e-8 and not mismatched and degenerate <= 0.02 * len(rows)
          and elapsed < 10.0 and sizes == set(range(3, 8))
          and min(taus) >= 1e-3 and max(taus) <= 1e-1)
    report(1, "oracle equivalence", ok,
           f"max err {max_err:.2e}, set mismatches {len(mismatched)}, degenerate {degenerate}/200, "
           f"{elapsed:.2f}s")
    assert ok


def test_energy_dissipation():
    start = time.perf_counter()
    worst_increase, worst_excess, failures = -np.inf, -np.inf, []
    for name in PRESETS:
        for dim in (1, 2):
            inst, traj = trajectory(name, dim)
            rep = dissipation_report(traj, inst.B, 1e-9)
            E = np.array(rep["E_series"])
            worst_increase = max(worst_increase, float(np.max(np.diff(E))))
            worst_excess = max(worst_excess, float(np.max(np.array(rep["cumulative_v2_series"])
                                                          - rep["bound_2E0"])))
            if rep["energy_increases"] or rep["prefix_violations"]:
                failures.append(f"{name}/{dim}D")
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 60.0
    report(2, "energy dissipation and 2E(u0) bound", ok,
           f"max dE {worst_increase:.2e}, max(tau sum |V|^2 - 2E0) {worst_excess:.2e}, "
           f"failures {failures}, {elapsed:.2f}s")
    assert ok


def test_complementarity_structure():
    details, ok = [], True
    for dim in (1, 2):
        inst, traj = trajectory("pinch", dim)
        rep = accumulate_bounds(traj, inst.B, tols=StructureTolerances(TOL, TOL, TOL))
        off = rep.max_off_support
        lo = min(s.min_mu_lower for s in rep.steps)
        hi = max(s.max_mu_upper for s in rep.steps)
        both = (any(s.lower_contact.any() for s in traj.step_results)
                and any(s.upper_contact.any() for s in traj.step_results))
        ok &= off <= TOL and lo >= -TOL and hi <= TOL and both
        details.append(f"{dim}D off-support {off:.2e}, min mu lower {lo:.3g}, "
                       f"max mu upper {hi:.3g}")
    report(3, "complementarity signs and support", ok, "; ".join(details))
    assert ok


def test_coincidence_identity():
    details, ok = [], True
    for dim in (1, 2):
        inst, traj = trajectory("squeeze", dim)
        omega0 = inst.pair.coincidence_mask
        rep = accumulate_bounds(traj, inst.B, tols=StructureTolerances(TOL, TOL, TOL))
        errs = [s.coincidence_error for s in rep.steps]
        exact = all(np.array_equal(u[omega0], inst.pair.f[omega0])
                    and np.array_equal(u[omega0], inst.pair.g[omega0]) for u in traj.states[1:])
        ok &= omega0.any() and not np.isnan(errs).any() and max(errs) <= TOL and exact
        details.append(f"{dim}D |Omega0| {int(omega0.sum())}, max error {max(errs):.2e}, "
                       f"exact equality {exact}")
    report(4, "coincidence identity", ok, "; ".join(details))
    assert ok


def test_penalty_bound_and_rho_convergence():
    start = time.perf_counter()
    inst = build_instance("pinch", 1, resolution=32)
    rows, ref = study_rho(inst, [1e-2, 1e-3, 1e-4, 1e-5, 1e-6], CONSTRAINED, workers=4)
    elapsed = time.perf_counter() - start
    within = all(r["within_bound"] for r in rows)
    final = rows[-1]["gap_to_constrained"]
    ok = within and final <= 1e-4 and elapsed < 30.0
    worst = max(max(r["violation_lower"], r["violation_upper"]) / r["bound_rhoE0"] for r in rows)
    report(5, "penalty bound and rho convergence", ok,
           f"max violation/(rho E0) {worst:.2e}, gaps "
           + ", ".join(f"{r['gap_to_constrained']:.2e}" for r in rows) + f", {elapsed:.2f}s")
    assert ok


def test_eps_shift_convergence():
    details, ok = [], True
    for dim in (1, 2):
        inst = build_instance("squeeze", dim)
        rows, _ = study_eps(inst, [1e-1, 1e-2, 1e-3, 1e-4], CONSTRAINED, workers=4)
        gaps = [r["max_gap"] for r in rows]
        mono = all(b < a for a, b in zip(gaps, gaps[1:]))
        ok &= mono and gaps[-1] <= 1e-3
        details.append(f"{dim}D gaps " + ", ".join(f"{g:.2e}" for g in gaps))
    report(6, "epsilon-shift convergence", ok, "; ".join(details))
    assert ok


@pytest.fixture(scope="module")
def tau_study():
    inst = build_instance("pinch", 1)
    rows, _ = study_tau(inst, [8, 16, 32, 64], CONSTRAINED, workers=4)
    return rows


def test_tau_refinement(tau_study):
    rows = tau_study
    gaps = [r["gap_to_2n"] for r in rows[:-1]]
    decreasing = all(b < a for a, b in zip(gaps, gaps[1:]))
    spread = ratio_spread([r["holder_quarter"] for r in rows])
    ok = decreasing and spread <= 10.0 and all(r["dissipation_ok"] for r in rows)
    report(7, "tau refinement", ok,
           "n-vs-2n gaps " + ", ".join(f"{g:.3e}" for g in gaps)
           + f", Hoelder-1/4 max/min {spread:.3f}")
    assert ok


def test_measure_and_regularity_bounded(tau_study):
    rows = tau_study
    tv = max_successive_ratio([r["cumulative_tv2"] for r in rows])
    d2 = max_successive_ratio([r["cumulative_d2"] for r in rows])
    ok = tv <= 2.0 and d2 <= 2.0 and all(r["cumulative_tv2"] > 0 for r in rows)
    report(8, "measure and regularity boundedness", ok,
           f"max successive ratio tau sum |mu|^2 {tv:.3f}, tau sum |D2 u|^2 {d2:.3f}")
    assert ok


def test_unconstrained_reduction():
    worst, ok = {}, True
    for dim in (1, 2):
        inst = build_instance("diffuse", dim, n=64)
        tau = inst.T / inst.n
        lu = splu((inst.B.matrix + sp.identity(inst.grid.size) / tau).tocsc())
        direct = [inst.u0]
        for _ in range(inst.n):
            direct.append(lu.solve(direct[-1] / tau))
        for opts in (CONSTRAINED, StepOptions(tau=1.0, method="penalized",
                                              penalty=PenaltyParams(0.0, 1e-4))):
            traj = run_flow(inst.grid, inst.B, inst.pair, inst.u0, inst.T, inst.n, opts)
            err = max(float(np.max(np.abs(a - b))) for a, b in zip(traj.states, direct))
            worst[f"{dim}D {opts.method}"] = err
            untouched = not any(s.lower_contact.any() or s.upper_contact.any()
                                for s in traj.step_results)
            ok &= err <= 1e-10 and untouched and traj.n == 64
    report(9, "unconstrained reduction", ok,
           ", ".join(f"{k} {v:.2e}" for k, v in worst.items()))
    assert ok
