"""Command line front end.

Exit codes: 0 success, 2 config error, 3 solver failure, 4 diagnostic
violation above tolerance.  Failures also write ``error.json`` to the output
directory and print the same record to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, build_from_config, load_config
from .diagnostics import StructureTolerances, accumulate_bounds, regularity_report
from .flow import dissipation_report, run_flow
from .gridio import (STEPS_SCHEMA, STUDY_SCHEMA, TRAJECTORY_SCHEMA, write_csv, write_dict_rows,
                     write_json)
from .grid import assemble_biharmonic, build_grid
from .obstacles import ObstacleError, obstacles_from_interior
from .oracle import FREE, LOWER, UPPER, OracleError, enumerate_step, step_objective
from .stepper import StepError, StepOptions, solve_constrained
from .studies import (max_successive_ratio, ratio_spread, study_eps, study_rho, study_tau)

log = logging.getLogger("obstacle_flow")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_DIAGNOSTIC = 0, 2, 3, 4

# diagnostic gates for `run`
SIGN_TOL = 1e-8
COINCIDENCE_TOL = 1e-8
DISSIPATION_TOL = 1e-9


class DiagnosticViolation(RuntimeError):
    pass


def _fail(out: Path, exit_code: int, kind: str, message: str, **extra) -> int:
    record = {"status": "error", "exit_code": exit_code, "error": kind, "message": message, **extra}
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "error.json", record)
    except OSError:
        pass
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    return exit_code


# --- run -------------------------------------------------------------------

def _trajectory_rows(inst, traj):
    grid = inst.grid
    coords = [c.ravel() for c in grid.coordinates()]
    nodes = np.arange(grid.size)
    omega0 = inst.pair.coincidence_mask
    nan = np.full(grid.size, np.nan)
    zeros = np.zeros(grid.size, dtype=bool)
    for i, u in enumerate(traj.states):
        if i == 0:
            V, mu, lo, hi = nan, nan, zeros, zeros
        else:
            s = traj.step_results[i - 1]
            V, mu, lo, hi = s.V, s.mu, s.lower_contact, s.upper_contact
        t = i * traj.tau
        for j in nodes:
            yield [i, t, j, *(c[j] for c in coords), u[j], V[j], mu[j], lo[j], hi[j], omega0[j]]


def run_command(cfg: RunConfig) -> int:
    inst = build_from_config(cfg)
    opts = cfg.step_options()
    traj = run_flow(inst.grid, inst.B, inst.pair, inst.u0, inst.T, inst.n, opts)
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)

    axes = ["x", "y"][: inst.grid.dimension]
    write_csv(out / "trajectory.csv", TRAJECTORY_SCHEMA,
              ["step", "time", "node", *axes, "u", "V", "mu", "lower_contact", "upper_contact",
               "coincidence"], _trajectory_rows(inst, traj))

    diss = dissipation_report(traj, inst.B, DISSIPATION_TOL)
    tols = StructureTolerances(SIGN_TOL, SIGN_TOL, COINCIDENCE_TOL)
    meas = accumulate_bounds(traj, inst.B, tols=tols)
    reg = regularity_report(traj)
    step_rows = []
    for i, (s, m) in enumerate(zip(traj.step_results, meas.steps), start=1):
        step_rows.append([i, i * traj.tau, diss["E_series"][i], diss["cumulative_v2_series"][i],
                          s.iterations, s.kkt_residual, m.signed_mass, m.total_variation,
                          m.pos_part_mass, m.neg_part_mass, m.off_support_max, m.min_mu_lower,
                          m.max_mu_upper, m.coincidence_error, reg.sup_second_differences[i - 1],
                          int(s.lower_contact.sum()), int(s.upper_contact.sum())])
    write_csv(out / "steps.csv", STEPS_SCHEMA,
              ["step", "time", "energy", "cumulative_v2", "iterations", "kkt_residual",
               "signed_mass", "total_variation", "pos_part_mass", "neg_part_mass",
               "off_support_max", "min_mu_lower", "max_mu_upper", "coincidence_error",
               "sup_second_difference", "lower_contacts", "upper_contacts"], step_rows)

    problems = []
    if diss["prefix_violations"]:
        problems.append("cumulative dissipation exceeds 2 E(u0)")
    if opts.method == "constrained":
        if diss["energy_increases"]:
            problems.append("energy increased")
        if meas.max_off_support > 10 * opts.tol_kkt:
            problems.append(f"measure off its support: {meas.max_off_support:.3e}")
        if meas.sign_violations:
            problems.append(f"{meas.sign_violations} sign violations on contact sets")
        if opts.epsilon == 0 and inst.pair.coincidence_mask.any():
            if not meas.max_coincidence_error <= COINCIDENCE_TOL:
                problems.append(f"coincidence identity error {meas.max_coincidence_error:.3e}")
            if not all(m.coincidence_exact for m in meas.steps):
                problems.append("state differs from the obstacles on the coincidence set")

    summary = {
        "version": __version__,
        "config": {"preset": cfg.preset, "dimension": inst.grid.dimension,
                   "resolution": inst.grid.resolution, "extent": inst.grid.extent, "T": inst.T,
                   "n": inst.n, "method": opts.method, "epsilon": cfg.epsilon, "rho": cfg.rho,
                   "seed": cfg.seed},
        "initial_projected": traj.initial_projected,
        "initial_projection_gap": traj.initial_projection_gap,
        "dissipation": diss,
        "measure": meas.as_dict(),
        "regularity": reg.as_dict(),
        "violations": problems,
    }
    write_json(out / "diagnostics.json", summary)
    if problems:
        raise DiagnosticViolation("; ".join(problems))
    return EXIT_OK


# --- studies ---------------------------------------------------------------

def study_rho_command(cfg: RunConfig) -> int:
    inst = build_from_config(cfg)
    rows, ref = study_rho(inst, cfg.rho_list, cfg.step_options(), cfg.epsilon, cfg.workers)
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_dict_rows(cfg.out / "study_rho.csv", STUDY_SCHEMA, rows)
    summary = {"E0": ref.E0, "n": ref.n, "T": ref.T, "rows": rows,
               "all_within_bound": all(r["within_bound"] for r in rows),
               "gap_monotone": all(r["gap_monotone"] for r in rows)}
    write_json(cfg.out / "study_rho.json", summary)
    if not summary["all_within_bound"]:
        raise DiagnosticViolation("penalty violation exceeds rho * E(u0)")
    if not summary["gap_monotone"]:
        log.warning("gap to the constrained solution is not monotone in rho")
    return EXIT_OK


def study_eps_command(cfg: RunConfig) -> int:
    inst = build_from_config(cfg)
    rows, gaps = study_eps(inst, cfg.eps_list, cfg.step_options(), cfg.workers)
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_dict_rows(cfg.out / "study_eps.csv", STUDY_SCHEMA, rows)
    per_step = [[eps, i + 1, (i + 1) * inst.T / inst.n, gap]
                for eps, series in zip(cfg.eps_list, gaps) for i, gap in enumerate(series)]
    write_csv(cfg.out / "study_eps_steps.csv", STUDY_SCHEMA, ["epsilon", "step", "time", "gap"],
              per_step)
    summary = {"rows": rows, "gap_monotone": all(r["gap_monotone"] for r in rows)}
    write_json(cfg.out / "study_eps.json", summary)
    if not summary["gap_monotone"]:
        log.warning("epsilon gap is not monotone")
    return EXIT_OK


def study_tau_command(cfg: RunConfig) -> int:
    inst = build_from_config(cfg)
    rows, _ = study_tau(inst, cfg.n_list, cfg.step_options(), cfg.workers)
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_dict_rows(cfg.out / "study_tau.csv", STUDY_SCHEMA, rows)
    summary = {
        "rows": rows,
        "gaps_decreasing": all(r["gap_decreasing"] for r in rows),
        "holder_spread": ratio_spread([r["holder_quarter"] for r in rows]),
        "tv2_max_successive_ratio": max_successive_ratio([r["cumulative_tv2"] for r in rows]),
        "d2_max_successive_ratio": max_successive_ratio([r["cumulative_d2"] for r in rows]),
        "dissipation_ok": all(r["dissipation_ok"] for r in rows),
    }
    write_json(cfg.out / "study_tau.json", summary)
    if not summary["dissipation_ok"]:
        raise DiagnosticViolation("dissipation bound violated in the refinement study")
    return EXIT_OK


# --- certify ---------------------------------------------------------------

def random_tiny_instance(rng: np.random.Generator, n_nodes: int | None = None):
    """Random 1D box-constrained step with 3..7 nodes."""
    n = int(rng.integers(3, 8)) if n_nodes is None else n_nodes
    grid = build_grid(1, 1.0, n)
    B = assemble_biharmonic(grid)
    f = rng.uniform(-1.0, 0.5, n)
    g = f + rng.uniform(0.0, 1.5, n)
    u_prev = rng.uniform(f, g)
    tau = float(10 ** rng.uniform(-3, -1))
    return grid, B, obstacles_from_interior(grid, f, g, B), u_prev, tau


def certify(instances: int, seed: int) -> list[dict]:
    """Compare the production step solver with the enumeration oracle."""
    rng = np.random.default_rng(seed)
    rows = []
    for k in range(instances):
        grid, B, pair, u_prev, tau = random_tiny_instance(rng)
        res = solve_constrained(grid, B, pair, u_prev, StepOptions(tau=tau))
        orc = enumerate_step(grid, B, pair, u_prev, tau)
        labels = np.array(orc.node_states)
        same_sets = bool(np.array_equal(res.lower_contact, labels == LOWER)
                         and np.array_equal(res.upper_contact & ~pair.coincidence_mask,
                                            labels == UPPER))
        match = labels != FREE
        rows.append({
            "instance": k,
            "nodes": grid.size,
            "tau": tau,
            "max_error": float(np.max(np.abs(res.u_new - orc.u))),
            "objective_error": abs(step_objective(B, u_prev, tau, res.u_new) - orc.objective),
            "multiplier_error": float(np.max(np.abs(res.mu[match] - orc.multipliers[match])))
            if match.any() else 0.0,
            "active_sets_equal": same_sets,
            "degenerate": orc.degenerate,
            "contacts": int(np.sum(labels == LOWER) + np.sum(labels == UPPER)),
        })
    return rows


def certify_command(cfg: RunConfig) -> int:
    rows = certify(cfg.instances, cfg.seed)
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_dict_rows(cfg.out / "certify.csv", STUDY_SCHEMA, rows)
    bad = [r["instance"] for r in rows
           if r["max_error"] > 1e-8 or (not r["active_sets_equal"] and not r["degenerate"])]
    summary = {"instances": len(rows), "seed": cfg.seed, "failures": bad,
               "degenerate": sum(r["degenerate"] for r in rows),
               "max_error": max(r["max_error"] for r in rows)}
    write_json(cfg.out / "certify.json", summary)
    if bad:
        raise DiagnosticViolation(f"{len(bad)} instances disagree with the oracle")
    return EXIT_OK


COMMANDS = {
    "run": run_command,
    "study-rho": study_rho_command,
    "study-eps": study_eps_command,
    "study-tau": study_tau_command,
    "certify": certify_command,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="obstacle-flow",
        description="Minimizing-movement solver for the two-obstacle parabolic biharmonic problem.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="INI-style run configuration")
        p.add_argument("--out", type=Path, help="output directory (overrides [output] dir)")
        p.add_argument("--seed", type=int, help="random seed (overrides [output] seed)")
        p.add_argument("--method", choices=["constrained", "penalized"])
        p.add_argument("--quiet", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    out = args.out or Path("out")
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        overrides = {k: v for k, v in (("out", args.out), ("seed", args.seed),
                                       ("method", args.method)) if v is not None}
        cfg = replace(cfg, **overrides)
        out = cfg.out
        code = COMMANDS[args.command](cfg)
    except (ConfigError, ObstacleError) as exc:
        return _fail(out, EXIT_CONFIG, type(exc).__name__, str(exc),
                     code=getattr(exc, "code", "CONFIG"))
    except (StepError, OracleError) as exc:
        return _fail(out, EXIT_SOLVER, type(exc).__name__, str(exc), code=exc.code,
                     step=getattr(exc, "step", None))
    except DiagnosticViolation as exc:
        return _fail(out, EXIT_DIAGNOSTIC, "DiagnosticViolation", str(exc))
    if not args.quiet:
        log.info("%s finished, outputs in %s", args.command, out)
    return code


if __name__ == "__main__":
    sys.exit(main())
