import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, settings
from hypothesis import strategies as st

from gridsan.checks import jacobian_fd_error, two_bus_grid
from gridsan.grid import rated_injection
from gridsan.powerflow import (
    NonConvergence,
    PfProblem,
    SolverOptions,
    VoltageState,
    bus_order,
    gmres,
    inject_fault,
    jacobian,
    real_system,
    residual,
    solve,
)

# Two-bus pure-conductance feeder: V2 solves v^2 - v + P_d = 0, roots 0.75 and 0.25 for P_d = 0.1875.
P_D = 0.1875
HIGH_ROOT = (1 + np.sqrt(1 - 4 * P_D)) / 2
LOW_ROOT = (1 - np.sqrt(1 - 4 * P_D)) / 2


@pytest.fixture
def two_bus_problem(two_bus):
    return PfProblem.from_grid(two_bus, rated_injection(two_bus))


@pytest.fixture(scope="module")
def fig2_problem():
    from gridsan.checks import fig2_grid
    g = fig2_grid()
    return PfProblem.from_grid(g, rated_injection(g))


def state(mags, angs=None):
    mags = np.asarray(mags, dtype=float)
    return VoltageState(mags, np.zeros_like(mags) if angs is None else np.asarray(angs, dtype=float))


def test_quadratic_roots_are_the_oracle():
    assert HIGH_ROOT == pytest.approx(0.75, abs=1e-15) and LOW_ROOT == pytest.approx(0.25, abs=1e-15)


def test_two_bus_ybus_is_pure_conductance(two_bus_problem):
    np.testing.assert_array_equal(two_bus_problem.ybus.toarray(), [[1, -1], [-1, 1]])
    assert two_bus_problem.injections[1] == -P_D


@pytest.mark.parametrize("v2", [HIGH_ROOT, LOW_ROOT])
def test_residual_vanishes_at_both_roots(two_bus_problem, v2):
    g = residual(state([1.0, v2]), two_bus_problem)
    assert abs(g[1]) <= 1e-15


def test_residual_zero_at_flat_start_without_injections(fig2):
    p = PfProblem.from_grid(fig2, np.zeros(fig2.n, dtype=complex))
    np.testing.assert_allclose(residual(state(np.ones(fig2.n)), p), 0, atol=1e-12)
    np.testing.assert_allclose(real_system(state(np.ones(fig2.n)), p), 0, atol=1e-12)


def test_real_system_orderings_permute_entries(fig2_problem, rng):
    n = fig2_problem.n
    v = state(rng.uniform(0.9, 1.1, n), np.r_[0, rng.uniform(-0.1, 0.1, n - 1)])
    base = np.sort(real_system(v, fig2_problem, "natural"))
    for o in ("bfs_from_slack", "degree_ascending"):
        np.testing.assert_array_equal(np.sort(real_system(v, fig2_problem, o)), base)


def test_orderings_are_permutations(fig2_problem):
    for o in ("natural", "bfs_from_slack", "degree_ascending"):
        order = bus_order(fig2_problem, o)
        assert sorted(order) == list(range(1, 11))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_real_imag_split_norm_bounds(seed):
    from gridsan.checks import fig2_grid
    g = fig2_grid()
    r = np.random.default_rng(seed)
    p = PfProblem.from_grid(g, rated_injection(g, {e.id: r.uniform(0, 1) for e in g.equipment}))
    v = state(r.uniform(0.8, 1.2, g.n), np.r_[0, r.uniform(-0.5, 0.5, g.n - 1)])
    f = np.abs(real_system(v, p)).max()
    gmax = np.abs(residual(v, p)[1:]).max()
    assert f <= np.sqrt(2) * gmax + 1e-15
    assert gmax <= np.sqrt(2) * f + 1e-15


def test_two_bus_jacobian_entry(two_bus_problem):
    # d/dv of (v^2 - v + P_d) at the high root.
    jac = jacobian(state([1.0, 0.75]), two_bus_problem).toarray()
    assert jac[0, 1] == pytest.approx(2 * 0.75 - 1, abs=1e-14)


def test_jacobian_fd_at_flat_start(fig2_problem):
    v = state(np.full(fig2_problem.n, 1.0))
    v.magnitudes[0] = abs(fig2_problem.slack_voltage)
    jac = jacobian(v, fig2_problem).toarray()
    h = 1e-6
    m = fig2_problem.n - 1
    for k in range(2 * m):
        x = np.concatenate([v.angles[1:], v.magnitudes[1:]])
        cols = []
        for sign in (1, -1):
            y = x.copy()
            y[k] += sign * h
            cols.append(real_system(state(np.r_[v.magnitudes[0], y[m:]], np.r_[0.0, y[:m]]), fig2_problem))
        fd = (cols[0] - cols[1]) / (2 * h)
        big = np.abs(fd) > 1e-6
        np.testing.assert_allclose(jac[big, k], fd[big], rtol=1e-5)
        assert np.abs(jac[~big, k]).max(initial=0) <= 1e-5


def test_jacobian_sparsity_within_ybus_blocks(fig2_problem):
    jac = jacobian(state(np.ones(fig2_problem.n)), fig2_problem).toarray()
    y = fig2_problem.ybus.toarray()[1:, 1:] != 0
    allowed = np.block([[y, y], [y, y]])
    assert not np.any((jac != 0) & ~allowed)


def test_jacobian_random_states(fig2_problem):
    ok, detail = jacobian_fd_error(fig2_problem, n_states=100, seed=0)
    assert ok, detail


def test_corrupted_jacobian_is_detected(fig2_problem):
    with inject_fault("jacobian"):
        ok, _ = jacobian_fd_error(fig2_problem, n_states=3, seed=0)
    assert not ok


@pytest.mark.parametrize("method", ["nr", "ink"])
def test_two_bus_solution(two_bus_problem, method):
    sol = solve(two_bus_problem, SolverOptions(method=method, tol=1e-12))
    assert abs(sol.voltage.magnitudes[1] - HIGH_ROOT) <= 1e-10
    assert abs(sol.voltage.angles[1]) <= 1e-12
    assert sol.newton_iters <= 5


def test_zero_injection_needs_no_update(fig2):
    p = PfProblem.from_grid(fig2.with_tap(1.0), np.zeros(fig2.n, dtype=complex))
    p = PfProblem(p.ybus, p.injections, p.slack, 1.0)
    sol = solve(p)
    assert sol.newton_iters == 0 and sol.final_residual <= 1e-12


def test_fig2_regression(fig2_problem):
    sol = solve(fig2_problem, SolverOptions(method="nr"))
    assert sol.final_residual <= 1e-8 and sol.newton_iters <= 10
    # slack untouched
    assert sol.voltage.magnitudes[0] == pytest.approx(1.04) and sol.voltage.angles[0] == 0
    assert np.abs(real_system(sol.voltage, fig2_problem)).max() == pytest.approx(sol.final_residual, abs=1e-12)


@pytest.mark.parametrize("opts", [
    dict(method="ink"),
    dict(method="ink", forcing="adaptive"),
    dict(method="ink", jacobian="matrix_free"),
    dict(method="ink", preconditioner="jacobi"),
    dict(method="ink", preconditioner="ilu", ordering="degree"),
])
def test_ink_matches_nr(fig2_problem, opts):
    nr = solve(fig2_problem, SolverOptions(method="nr", tol=1e-10))
    ink = solve(fig2_problem, SolverOptions(tol=1e-10, **opts))
    assert np.abs(ink.voltage.complex - nr.voltage.complex).max() <= 1e-6
    assert ink.total_krylov_iters == sum(ink.krylov_per_newton) > 0


@pytest.mark.parametrize("method", ["nr", "ink"])
def test_orderings_give_same_solution(fig2_problem, method):
    sols = [solve(fig2_problem, SolverOptions(method=method, ordering=o, tol=1e-10)).voltage.complex
            for o in ("natural", "bfs_from_slack", "degree_ascending")]
    for s in sols[1:]:
        assert np.abs(s - sols[0]).max() <= 1e-8


def test_nonconvergence_on_overload(fig2):
    p = PfProblem.from_grid(fig2, rated_injection(fig2, {e.id: 10.0 for e in fig2.equipment}))
    with pytest.raises(NonConvergence) as err:
        solve(p, SolverOptions(max_newton_iters=8))
    assert err.value.iters == 8 and err.value.residual > 1e-8


def test_warm_start_converges_faster(fig2_problem):
    cold = solve(fig2_problem)
    warm = solve(fig2_problem, initial=cold.voltage)
    assert warm.newton_iters == 0


def test_doubling_injection_roughly_doubles_angles():
    # Smoke test on a stiff line where the power flow is nearly linear.
    angles = []
    for load in (0.001 + 0.0005j, 0.002 + 0.001j):
        g = two_bus_grid(load=load, series=50.0 - 50j)
        angles.append(solve(PfProblem.from_grid(g, rated_injection(g))).voltage.angles[1])
    assert angles[1] / angles[0] == pytest.approx(2.0, rel=0.2)


@pytest.mark.parametrize("bad", [dict(tol=0), dict(eta=1.0), dict(method="bogus"), dict(ordering="random")])
def test_invalid_options(bad):
    with pytest.raises(ValueError):
        SolverOptions(**bad)


class TestGmres:
    def test_matches_direct_solve(self, rng):
        a = np.eye(40) * 4 + rng.standard_normal((40, 40)) * 0.3
        b = rng.standard_normal(40)
        out = gmres(lambda v: a @ v, b, rtol=1e-12, restart=40)
        assert out.converged
        np.testing.assert_allclose(out.x, np.linalg.solve(a, b), rtol=1e-9, atol=1e-10)

    def test_agrees_with_scipy_on_restarted_problem(self, rng):
        a = np.diag(np.linspace(1, 50, 60)) + rng.standard_normal((60, 60)) * 0.1
        b = rng.standard_normal(60)
        ours = gmres(lambda v: a @ v, b, rtol=1e-10, restart=10, max_cycles=200)
        ref, info = spla.gmres(a, b, rtol=1e-10, restart=10, maxiter=200)
        assert ours.converged and info == 0
        np.testing.assert_allclose(ours.x, ref, rtol=1e-6, atol=1e-8)

    def test_relative_tolerance_is_met(self, rng):
        a = np.eye(30) + rng.standard_normal((30, 30)) * 0.2
        b = rng.standard_normal(30)
        out = gmres(lambda v: a @ v, b, rtol=1e-3, restart=30)
        assert np.linalg.norm(b - a @ out.x) <= 1e-3 * np.linalg.norm(b) * (1 + 1e-9)

    def test_zero_rhs(self):
        out = gmres(lambda v: 2 * v, np.zeros(5))
        assert out.converged and out.iterations == 0 and not out.x.any()

    def test_stagnation_is_reported(self):
        # A rotation has no Krylov progress with restart 1 from b = e1.
        a = np.array([[0.0, 1.0], [-1.0, 0.0]])
        out = gmres(lambda v: a @ v, np.array([1.0, 0.0]), rtol=1e-8, restart=1, max_cycles=5)
        assert out.stagnated and not out.converged

