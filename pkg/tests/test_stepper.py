import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from obstacle_flow.grid import assemble_biharmonic, build_grid, norm
from obstacle_flow.obstacles import PenaltyParams, obstacles_from_interior
from obstacle_flow.oracle import LOWER, UPPER, enumerate_step
from obstacle_flow.stepper import (INFEASIBLE, RHO_NONPOSITIVE, StepError, StepOptions, beta,
                                   classify_contacts, gamma, penalized_objective,
                                   penalized_residual, solve_box_qp, solve_constrained,
                                   solve_penalized, solve_step)

from conftest import far_pair


def direct_step(B, u_prev, tau):
    A = B.matrix + sp.identity(B.shape[0]) / tau
    return spsolve(A.tocsc(), u_prev / tau)


def random_pair(grid, B, rng):
    f = rng.uniform(-1.0, 0.5, grid.size)
    g = f + rng.uniform(0.0, 1.5, grid.size)
    return obstacles_from_interior(grid, f, g, B)


# penalty functions

def test_gamma_examples():
    assert gamma(-1.0, 0.5) == 2.0
    assert gamma(0.3, 0.1) == 0.0
    assert gamma(0.0, 123.0) == 0.0


def test_beta_examples():
    assert beta(-0.5, 0.25) == -4.0
    assert beta(1.0, 0.1) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(1e-3, 10))
def test_beta_is_derivative_of_gamma(lam, rho):
    d = 1e-6
    if abs(lam) < 2 * d:
        return
    fd = (gamma(lam + d, rho) - gamma(lam - d, rho)) / (2 * d)
    assert fd == pytest.approx(beta(lam, rho), rel=1e-5, abs=1e-6)


@pytest.mark.parametrize("fn", [gamma, beta])
def test_rho_guard(fn):
    with pytest.raises(StepError) as exc:
        fn(1.0, 0.0)
    assert exc.value.code == RHO_NONPOSITIVE


# contacts

def test_classify_contacts():
    grid = build_grid(1, 1.0, 5)
    f, g = np.full(5, -1.0), np.full(5, 1.0)
    pair = obstacles_from_interior(grid, f, g)
    lo, hi = classify_contacts(pair, f)
    assert lo.all() and not hi.any()
    lo, hi = classify_contacts(pair, np.zeros(5))
    assert not lo.any() and not hi.any()
    u = np.zeros(5)
    u[2] = 1.0
    lo, hi = classify_contacts(pair, u)
    assert not lo.any() and hi.tolist() == [False, False, True, False, False]


# constrained steps

def test_far_obstacles_zero_is_fixed(line3):
    grid, _, B = line3
    res = solve_constrained(grid, B, far_pair(grid, B), np.zeros(3), StepOptions(tau=0.01))
    assert np.array_equal(res.u_new, np.zeros(3))
    assert np.abs(res.mu).max() == 0.0


def test_pinned_region_forced():
    grid = build_grid(1, 1.0, 9)
    B = assemble_biharmonic(grid)
    phi = np.sin(np.linspace(0.3, 2.5, 9))
    pair = obstacles_from_interior(grid, phi, phi, B)
    rng = np.random.default_rng(3)
    # u_prev must lie in the box, so it is phi itself; vary tau instead
    for tau in (1e-3, 1e-1, 10.0):
        res = solve_constrained(grid, B, pair, phi, StepOptions(tau=tau))
        assert np.array_equal(res.u_new, phi)
    f = np.full(9, -2.0)
    g = np.full(9, 2.0)
    f[2:6] = g[2:6] = phi[2:6]
    pair = obstacles_from_interior(grid, f, g, B)
    u_prev = np.clip(rng.uniform(-1, 1, 9), f, g)
    res = solve_constrained(grid, B, pair, u_prev, StepOptions(tau=0.05))
    assert np.array_equal(res.u_new[2:6], phi[2:6])


def test_infeasible_previous_state(line3):
    grid, _, B = line3
    pair = obstacles_from_interior(grid, -np.ones(3), np.ones(3), B)
    with pytest.raises(StepError) as exc:
        solve_constrained(grid, B, pair, np.full(3, 5.0), StepOptions(tau=0.1))
    assert exc.value.code == INFEASIBLE


def test_matches_oracle_three_nodes(line3):
    grid, _, B = line3
    rng = np.random.default_rng(2024)
    for _ in range(100):
        pair = random_pair(grid, B, rng)
        u_prev = rng.uniform(pair.f, pair.g)
        res = solve_constrained(grid, B, pair, u_prev, StepOptions(tau=0.01))
        orc = enumerate_step(grid, B, pair, u_prev, 0.01)
        assert np.max(np.abs(res.u_new - orc.u)) <= 1e-8
        labels = np.array(orc.node_states)
        if not orc.degenerate:
            assert np.array_equal(res.lower_contact, labels == LOWER)
            assert np.array_equal(res.upper_contact, labels == UPPER)


def test_kkt_signs(line3):
    grid, _, B = line3
    rng = np.random.default_rng(5)
    for _ in range(50):
        pair = random_pair(grid, B, rng)
        u_prev = rng.uniform(pair.f, pair.g)
        res = solve_constrained(grid, B, pair, u_prev, StepOptions(tau=0.05))
        free = ~(res.lower_contact | res.upper_contact)
        scale = np.abs(B.toarray()).max() * (1 + np.abs(res.u_new).max())
        assert np.all(np.abs(res.mu[free]) <= 1e-10 * scale)
        only_lo = res.lower_contact & ~res.upper_contact
        only_hi = res.upper_contact & ~res.lower_contact
        assert np.all(res.mu[only_lo] >= -1e-10 * scale)
        assert np.all(res.mu[only_hi] <= 1e-10 * scale)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_permutation_equivariance_1d_mirror(seed):
    # mirroring the line is a symmetry of B, so the solution mirrors too
    grid = build_grid(1, 1.0, 7)
    B = assemble_biharmonic(grid)
    rng = np.random.default_rng(seed)
    pair = random_pair(grid, B, rng)
    u_prev = rng.uniform(pair.f, pair.g)
    mirrored = obstacles_from_interior(grid, pair.f[::-1].copy(), pair.g[::-1].copy(), B)
    a = solve_constrained(grid, B, pair, u_prev, StepOptions(tau=0.02))
    b = solve_constrained(grid, B, mirrored, u_prev[::-1].copy(), StepOptions(tau=0.02))
    assert np.allclose(a.u_new[::-1], b.u_new, atol=1e-10)


def test_energy_fields_and_multiplier(line3):
    grid, _, B = line3
    pair = obstacles_from_interior(grid, np.array([-1.0, 0.2, -1.0]), np.ones(3), B)
    u_prev = np.array([0.0, 0.5, 0.0])
    res = solve_constrained(grid, B, pair, u_prev, StepOptions(tau=0.1))
    assert np.allclose(res.V, (res.u_new - u_prev) / 0.1)
    assert np.allclose(res.mu, B @ res.u_new + res.V)
    assert res.energy_after <= res.energy_before


def test_box_qp_projected_newton_path():
    # dense SPD problem with many bound changes
    rng = np.random.default_rng(11)
    M = rng.normal(size=(12, 12))
    A = sp.csr_matrix(M @ M.T + 0.1 * np.eye(12))
    b = rng.normal(size=12) * 10
    lo, hi = -np.ones(12), np.ones(12)
    res = solve_box_qp(A, b, lo, hi, np.zeros(12))
    x = res.x
    grad = A @ x - b
    assert np.all((x >= lo - 1e-12) & (x <= hi + 1e-12))
    free = (x > lo + 1e-9) & (x < hi - 1e-9)
    assert np.abs(grad[free]).max(initial=0) < 1e-8
    assert np.all(grad[x <= lo + 1e-9] >= -1e-8)
    assert np.all(grad[x >= hi - 1e-9] <= 1e-8)


def test_projected_newton_fallback_agrees():
    from obstacle_flow.stepper import _projected_newton

    rng = np.random.default_rng(13)
    for _ in range(10):
        M = rng.normal(size=(15, 15))
        A = sp.csr_matrix(M @ M.T + 0.05 * np.eye(15))
        b = rng.normal(size=15) * 10
        lo, hi = -np.ones(15), np.ones(15)
        lo[3] = hi[3] = 0.25
        pdas = solve_box_qp(A, b, lo, hi, np.zeros(15))
        pn = _projected_newton(A, b, lo, hi, np.zeros(15), 1e-10, 200, 0)
        assert pn.converged and pn.fallback_used and not pdas.fallback_used
        assert np.allclose(pn.x, pdas.x, atol=1e-9)
        assert pn.x[3] == 0.25


# penalized steps

def test_penalized_linear_reduction():
    grid = build_grid(1, 8.0, 20)
    B = assemble_biharmonic(grid)
    rng = np.random.default_rng(0)
    u_prev = rng.uniform(-1, 1, grid.size)
    opts = StepOptions(tau=0.05, method="penalized", penalty=PenaltyParams(0.0, 1e-4))
    res = solve_penalized(grid, B, far_pair(grid, B, 1e3), u_prev, opts)
    assert np.max(np.abs(res.u_new - direct_step(B, u_prev, 0.05))) <= 1e-10


def test_penalized_residual_small():
    grid = build_grid(1, 8.0, 16)
    B = assemble_biharmonic(grid)
    rng = np.random.default_rng(7)
    pair = random_pair(grid, B, rng)
    u_prev = rng.uniform(pair.f, pair.g)
    opts = StepOptions(tau=0.1, method="penalized", penalty=PenaltyParams(0.0, 1e-3))
    res = solve_penalized(grid, B, pair, u_prev, opts)
    A = B.matrix + sp.identity(grid.size) / 0.1
    r = penalized_residual(A, u_prev / 0.1, pair, 1e-3, res.u_new)
    assert np.abs(r).max() <= 1e-8 * max(1.0, np.abs(u_prev / 0.1).max())
    assert np.isfinite(penalized_objective(A, u_prev / 0.1, pair, 1e-3, res.u_new))


def test_rho_sequence_converges():
    # h = 1 keeps the multiplier O(1), so the penalty gap is O(rho)
    grid = build_grid(1, 4.0, 3)
    B = assemble_biharmonic(grid)
    pair = obstacles_from_interior(grid, np.array([-1.0, 0.3, -1.0]),
                                   np.array([1.0, 1.0, -0.2]), B)
    u_prev = np.array([-0.5, 0.3, -0.2])
    ref_step = solve_constrained(grid, B, pair, u_prev, StepOptions(tau=1.0))
    assert ref_step.lower_contact[1] and ref_step.upper_contact[2]
    ref = ref_step.u_new
    gaps = []
    for rho in (1e-2, 1e-3, 1e-4, 1e-5, 1e-6):
        opts = StepOptions(tau=1.0, method="penalized", penalty=PenaltyParams(0.0, rho))
        gaps.append(norm(grid, solve_penalized(grid, B, pair, u_prev, opts).u_new - ref))
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] <= 1e-4


def test_solve_step_dispatch(line3):
    grid, _, B = line3
    pair = far_pair(grid, B)
    u = np.array([0.1, 0.2, 0.3])
    a = solve_step(grid, B, pair, u, StepOptions(tau=0.01))
    b = solve_step(grid, B, pair, u, StepOptions(tau=0.01, method="penalized",
                                                  penalty=PenaltyParams(0.0, 1.0)))
    assert a.method == "constrained" and b.method == "penalized"
    assert np.allclose(a.u_new, b.u_new, atol=1e-10)
