import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import lsq_linear

from certmpc.certify import kappa_pgdm
from certmpc.errors import DimensionMismatch, InvalidSpec, NonFiniteIterate, OracleNonConvergence
from certmpc.model import condense, eval_cost
from certmpc.solvers import (AdmmState, StopPolicy, StopReason, admm_solve, oracle_solve,
                             pgdm_solve, project_box, projected_gradient_norm)

from conftest import random_spec

RHO = 3.1231


def unconstrained(qp, x0):
    return -np.linalg.solve(qp.H, qp.S.T @ x0)


def bvls_reference(qp, x0):
    """Box QP as bounded least squares: 1/2||Lu + L^-1 c||^2 with H = L L'."""
    Lc = np.linalg.cholesky(qp.H)
    c = qp.S.T @ x0
    res = lsq_linear(Lc.T, -np.linalg.solve(Lc, c), bounds=(qp.lo, qp.hi),
                     method="bvls", tol=1e-14)
    return res.x


# -- StopPolicy / projection ----------------------------------------------------

def test_stop_policy_validation():
    with pytest.raises(InvalidSpec):
        StopPolicy.fixed(0)
    with pytest.raises(InvalidSpec):
        StopPolicy.tolerance(0.0)
    assert StopPolicy.fixed(14).describe() == "FixedIterations(14)"
    assert StopPolicy.tolerance(1e-3).kind == "tolerance"
    assert StopPolicy.combined(172, 1e-3).describe() == "Combined(172, 0.001)"


def test_project_box_examples():
    np.testing.assert_array_equal(project_box([1.5, -2, 0.3], -1, 1), [1, -1, 0.3])
    u = np.array([0.2, -0.9, 1.0])
    np.testing.assert_array_equal(project_box(u, -1, 1), u)
    with pytest.raises(DimensionMismatch):
        project_box([0.0, 1.0], [-1, -1, -1], [1, 1, 1])


def test_projection_is_closest_feasible_point(rng):
    lo, hi = -np.ones(5), np.ones(5)
    for _ in range(10):
        u = rng.normal(size=5) * 2
        p = project_box(u, lo, hi)
        z = rng.uniform(lo, hi, size=(1000, 5))
        assert np.all(np.linalg.norm(p - u) <= np.linalg.norm(z - u, axis=1))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=8))
def test_projection_idempotent(values):
    u = np.array(values)
    p = project_box(u, -np.ones_like(u), 2 * np.ones_like(u))
    assert np.all((p >= -1) & (p <= 2))
    np.testing.assert_array_equal(project_box(p, -np.ones_like(u), 2 * np.ones_like(u)), p)


# -- PGDM ----------------------------------------------------------------------

def test_pgdm_origin_is_fixed_point(di_qp):
    run = pgdm_solve(di_qp, np.zeros(2), policy=StopPolicy.tolerance(1e-3))
    assert run.iterations == 1
    assert run.stop_reason is StopReason.TOLERANCE_MET
    np.testing.assert_array_equal(run.u_final, np.zeros(10))


def test_pgdm_unconstrained_minimizer(di_qp):
    x0 = np.array([0.15, -0.1])
    ref = unconstrained(di_qp, x0)
    assert np.abs(ref).max() < 1
    run = pgdm_solve(di_qp, x0, policy=StopPolicy.tolerance(1e-9))
    assert np.linalg.norm(run.u_final - ref) <= 1e-6 * np.linalg.norm(ref)


def test_pgdm_per_iterate_contraction(di_qp, rng):
    mu, L, kappa = kappa_pgdm(di_qp)
    for _ in range(5):
        x0 = rng.uniform(-6, 6, 2)
        u_star = oracle_solve(di_qp, x0)
        run = pgdm_solve(di_qp, x0, policy=StopPolicy.tolerance(1e-3), trace=True, reference=u_star)
        d = np.array([r.distance for r in run.trace])
        assert np.all(d[1:] <= kappa * d[:-1] + 1e-12)
        m = np.arange(d.size)
        assert np.all(d <= kappa ** m * d[0] * (1 + 1e-9) + 1e-12)


def test_pgdm_iterates_feasible_and_deterministic(di_qp):
    x0 = np.array([-6.0, 2.0])
    pol = StopPolicy.fixed(300)
    r1 = pgdm_solve(di_qp, x0, policy=pol, trace=True)
    r2 = pgdm_solve(di_qp, x0, policy=pol, trace=True)
    for rec in r1.trace:
        assert np.all((rec.u >= -1) & (rec.u <= 1))
    assert r1.u_final.tobytes() == r2.u_final.tobytes()
    assert r1.stop_reason is StopReason.HIT_ITERATION_CAP and r1.iterations == 300
    # traced and kernel paths agree bit for bit
    r3 = pgdm_solve(di_qp, x0, policy=pol)
    assert r3.u_final.tobytes() == r1.u_final.tobytes()


def test_pgdm_tolerance_test_holds_at_exit(di_qp):
    x0 = np.array([3.0, -1.0])
    run = pgdm_solve(di_qp, x0, policy=StopPolicy.tolerance(1e-4), trace=True)
    assert run.stop_reason is StopReason.TOLERANCE_MET
    assert run.trace[-1].residual <= 1e-4
    assert all(r.residual > 1e-4 for r in run.trace[1:-1])


def test_pgdm_rejects_infeasible_start_and_bad_step(di_qp):
    with pytest.raises(InvalidSpec):
        pgdm_solve(di_qp, np.zeros(2), u0=2 * np.ones(10))
    with pytest.raises(InvalidSpec):
        pgdm_solve(di_qp, np.zeros(2), alpha=-1.0)


def test_pgdm_diverging_step_raises(di_qp):
    with pytest.raises(NonFiniteIterate):
        # step far above 2 / L on an unbounded box blows up
        pgdm_solve(_wide(di_qp), np.array([1.0, 1.0]), u0=np.zeros(10), alpha=1.0,
                   policy=StopPolicy.fixed(5000))


def _wide(qp):
    from dataclasses import replace
    return replace(qp, lo=np.full(qp.n, -np.inf), hi=np.full(qp.n, np.inf))


# -- ADMM ----------------------------------------------------------------------

def test_admm_origin_is_fixed_point(di_qp):
    run = admm_solve(di_qp, np.zeros(2), AdmmState.zeros(10, RHO), StopPolicy.tolerance(1e-3))
    assert run.iterations == 1
    for vec in (run.state.u, run.state.v, run.state.lam):
        np.testing.assert_array_equal(vec, np.zeros(10))


def test_admm_unconstrained_minimizer(di_qp):
    x0 = np.array([0.15, -0.1])
    ref = unconstrained(di_qp, x0)
    run = admm_solve(di_qp, x0, policy=StopPolicy.tolerance(1e-9), rho=RHO)
    assert np.linalg.norm(run.u_final - ref) <= 1e-6 * np.linalg.norm(ref)


def test_admm_primal_residual_vanishes(di_qp, rng):
    for _ in range(10):
        x0 = rng.uniform(-6, 6, 2)
        run = admm_solve(di_qp, x0, policy=StopPolicy.tolerance(1e-10), rho=RHO)
        assert np.linalg.norm(run.state.u - run.state.v) < 1e-8
        np.testing.assert_allclose(run.u_final, oracle_solve(di_qp, x0), atol=1e-7)


def test_admm_v_step_minimizes_separable_subproblem(rng):
    # v = argmin_{v in box} -v'lam + rho/2 ||u - v||^2, checked per coordinate on a fine grid
    rho = 2.5
    grid = np.linspace(-1, 1, 200001)
    for _ in range(30):
        u, lam = rng.normal(size=2) * 2
        v = project_box(np.array([u + lam / rho]), -1, 1)[0]
        obj = -grid * lam + 0.5 * rho * (u - grid) ** 2
        assert abs(v - grid[np.argmin(obj)]) <= 2e-5


def test_admm_v_iterates_feasible_and_deterministic(di_qp):
    x0 = np.array([-6.0, 2.0])
    r1 = admm_solve(di_qp, x0, policy=StopPolicy.fixed(50), rho=RHO, trace=True)
    r2 = admm_solve(di_qp, x0, policy=StopPolicy.fixed(50), rho=RHO)
    for rec in r1.trace:
        assert np.all((rec.u >= -1) & (rec.u <= 1))
    assert r1.u_final.tobytes() == r2.u_final.tobytes()


def test_admm_needs_rho(di_qp):
    with pytest.raises(InvalidSpec):
        admm_solve(di_qp, np.zeros(2))
    with pytest.raises(InvalidSpec):
        AdmmState.zeros(10, 0.0)
    with pytest.raises(DimensionMismatch):
        admm_solve(di_qp, np.zeros(2), AdmmState.zeros(4, 1.0))


# -- oracle --------------------------------------------------------------------

def test_oracle_origin(di_qp):
    np.testing.assert_array_equal(oracle_solve(di_qp, np.zeros(2)), np.zeros(10))


def test_oracle_unconstrained(di_qp, rng):
    for _ in range(20):
        x0 = rng.normal(size=2) * 0.1
        ref = unconstrained(di_qp, x0)
        assert np.linalg.norm(oracle_solve(di_qp, x0) - ref) <= 1e-8 * max(1.0, np.linalg.norm(ref))


def test_oracle_saturating_instance(di_qp):
    x0 = np.array([-60.0, 20.0])
    ref = unconstrained(di_qp, x0)
    assert abs(ref[0]) > 5
    u = oracle_solve(di_qp, x0)
    assert abs(u[0]) == 1.0
    assert projected_gradient_norm(di_qp, u, x0) <= 1e-8


def test_oracle_matches_bvls_and_pgdm(rng):
    for _ in range(30):
        spec = random_spec(rng)
        qp = condense(spec)
        x0 = rng.normal(size=qp.nx) * 5
        u = oracle_solve(qp, x0)
        np.testing.assert_allclose(u, bvls_reference(qp, x0), atol=1e-6)
        np.testing.assert_allclose(u, oracle_solve(qp, x0, method="pgdm"), atol=1e-6)
        assert eval_cost(qp, u, x0) <= eval_cost(qp, bvls_reference(qp, x0), x0) + 1e-9


def test_oracle_cap_raises(di_qp):
    with pytest.raises(OracleNonConvergence):
        oracle_solve(di_qp, np.array([-6.0, 2.0]), method="pgdm", max_iter=3)


def test_oracle_deterministic(di_qp):
    x0 = np.array([4.0, -3.0])
    assert oracle_solve(di_qp, x0).tobytes() == oracle_solve(di_qp, x0).tobytes()
