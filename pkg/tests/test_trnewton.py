import numpy as np
import pytest

from solvers.errors import ConfigError
from solvers.fem import build_problem
from solvers.mesh import interpolate
from solvers.trnewton import TRConfig, TrustRegionSolver, _boundary_root, trust_region_solve


@pytest.fixture
def tr_solver(mesh8, semilinear_problem):
    return TrustRegionSolver(mesh8, semilinear_problem)


@pytest.fixture
def tr_state(tr_solver):
    return tr_solver.reduced_objective_and_gradient(tr_solver.initial_iterate())


@pytest.mark.parametrize(
    "options",
    [
        {'eta1': 0.2, 'eta2': 0.5},
        {'eta1': 1.0},
        {'gamma1': 1.0},
        {'gamma2': 0.9},
        {'theta1': 1.0},
        {'Delta0': 0.0},
        {'max_outer': 0},
        {'min_radius_ratio': 1.0},
        {'min_radius_ratio': -1e-3},
    ],
)
def test_invalid_trust_region_config(options):
    with pytest.raises(ConfigError):
        TRConfig(**options)


def test_default_parameters():
    config = TRConfig()
    assert (config.eta1, config.eta2, config.gamma1, config.gamma2) == (0.75, 0.25, 0.5, 2.0)
    assert (config.theta1, config.theta2) == (1.5, 0.05)


def test_boundary_root():
    # |s + sigma d| = 2 with s = 1, d = 1 in one dimension
    assert _boundary_root(1.0, 1.0, 1.0, 2.0) == pytest.approx(1.0)
    assert _boundary_root(1.0, -1.0, 1.0, 2.0) == pytest.approx(3.0)
    assert _boundary_root(0.0, 0.0, 4.0, 2.0) == pytest.approx(1.0)


class TestReducedObjective:
    def test_consistent_state(self, tr_solver, tr_state):
        s = tr_solver
        load = s.control_load(tr_state.w)
        assert np.max(np.abs(s.states.state_residual(tr_state.y, load))) <= 1e-9
        assert tr_state.J_value == pytest.approx(s.objective(tr_state.y))
        assert tr_state.J_value == s.corrected_objective(tr_state.y, tr_state.p, load)
        assert np.allclose(tr_state.residual, tr_state.w + tr_state.p)
        assert np.allclose(s.reduced_gradient_load(tr_state), 50.0 * (tr_state.D @ tr_state.residual))

    def test_zero_bound(self, mesh8):
        problem = build_problem(mesh8, u_bound=0.0, alpha=3.0)
        s = TrustRegionSolver(mesh8, problem)
        state = s.reduced_objective_and_gradient(interpolate(mesh8, lambda x1, x2: x1 - 0.2 + 0.0 * x2))
        assert np.allclose(state.y, 0.0)
        assert state.J_value == pytest.approx(0.5 * problem.y_d @ (s.mass @ problem.y_d))
        assert np.allclose(state.p, s.states.solve_adjoint(np.zeros(mesh8.num_nodes)))


class TestSecondDerivative:
    def test_symmetric(self, tr_solver, tr_state, rng):
        l1, l2 = rng.standard_normal((2, tr_solver.mesh.num_nodes))
        left = tr_solver.apply_f_second(tr_state.y, tr_state.p, l1) @ l2
        right = l1 @ tr_solver.apply_f_second(tr_state.y, tr_state.p, l2)
        assert left == pytest.approx(right, rel=1e-10)

    def test_linear_case_is_S_M_S(self, mesh8, linear_problem, rng):
        s = TrustRegionSolver(mesh8, linear_problem)
        load = rng.standard_normal(mesh8.num_nodes)
        y = np.zeros(mesh8.num_nodes)
        expected = s.states.apply_S_load(s.mass @ s.states.apply_S_load(load))
        assert np.allclose(s.apply_f_second(y, y, load), expected, atol=1e-12)

    def test_positive_semidefinite_without_adjoint(self, tr_solver, tr_state, rng):
        zero = np.zeros(tr_solver.mesh.num_nodes)
        for load in rng.standard_normal((5, tr_solver.mesh.num_nodes)):
            assert load @ tr_solver.apply_f_second(tr_state.y, zero, load) >= 0.0

    def test_two_solves_per_application(self, tr_solver, tr_state, rng):
        before = tr_solver.counters.snapshot()
        tr_solver.apply_f_second(tr_state.y, tr_state.p, rng.standard_normal(tr_solver.mesh.num_nodes))
        after = tr_solver.counters.snapshot()
        assert after['solves'] - before['solves'] == 2
        assert after['factorizations'] == before['factorizations']

    def test_finite_differences_of_reduced_gradient(self, mesh16, rng):
        """Test f''(u) v against central differences of p(u) at a smooth control."""
        problem = build_problem(mesh16, u_bound=50.0, alpha=3.0)
        s = TrustRegionSolver(mesh16, problem)
        u = interpolate(mesh16, lambda x1, x2: 20.0 * np.sin(np.pi * x1) * np.cos(np.pi * x2))
        v = interpolate(mesh16, lambda x1, x2: 10.0 * (x1 * x2 + 0.3))

        def adjoint(control):
            y = s.states.solve_semilinear_state(s.mass @ control)
            return y, s.states.solve_adjoint(y)

        y, p = adjoint(u)
        t = 1e-4
        difference = (adjoint(u + t * v)[1] - adjoint(u - t * v)[1]) / (2 * t)
        exact = s.apply_f_second(y, p, s.mass @ v)
        assert np.linalg.norm(difference - exact) <= 1e-4 * np.linalg.norm(exact)


class TestModelOperators:
    def test_T_self_adjoint_in_level_set_form(self, tr_solver, tr_state, rng):
        D = tr_state.D
        v1, v2 = rng.standard_normal((2, tr_solver.mesh.num_nodes))
        left = D.inner(v1, tr_solver.apply_T(tr_state, v2))
        right = D.inner(tr_solver.apply_T(tr_state, v1), v2)
        assert left == pytest.approx(right, rel=1e-10)

    def test_H_symmetric_and_annihilates_iterate(self, tr_solver, tr_state, rng):
        v1, v2 = rng.standard_normal((2, tr_solver.mesh.num_nodes))
        assert v1 @ tr_solver.apply_H(tr_state, v2) == pytest.approx(
            v2 @ tr_solver.apply_H(tr_state, v1), rel=1e-10
        )
        Hw = tr_solver.apply_H(tr_state, tr_state.w)
        scale = np.linalg.norm(tr_solver.apply_H(tr_state, v1)) * np.linalg.norm(tr_state.w) / np.linalg.norm(v1)
        assert np.linalg.norm(Hw) <= 1e-10 * scale

    def test_H_positive_semidefinite_in_linear_case(self, mesh8, linear_problem, rng):
        s = TrustRegionSolver(mesh8, linear_problem)
        state = s.reduced_objective_and_gradient(s.initial_iterate())
        for v in rng.standard_normal((5, mesh8.num_nodes)):
            assert v @ s.apply_H(state, v) >= -1e-12 * (v @ v)


class TestSteihaug:
    @pytest.fixture
    def linear_solver(self, mesh8, linear_problem):
        return TrustRegionSolver(mesh8, linear_problem)

    def test_interior_step_reaches_tolerance(self, linear_solver):
        s = linear_solver
        state = s.reduced_objective_and_gradient(s.initial_iterate())
        result = s.steihaug_step(state, Delta=1e8)
        assert not result.boundary_hit
        residual = s.apply_T(state, result.step) + state.residual
        tolerance = s.steihaug_tolerance(state)
        assert state.D.seminorm(residual) <= 1.001 * tolerance + 1e-12 * state.D.seminorm(state.residual)

    def test_boundary_step(self, tr_solver, tr_state):
        Delta = 1e-3 * tr_state.D.seminorm(tr_state.residual)
        result = tr_solver.steihaug_step(tr_state, Delta=Delta)
        assert result.boundary_hit
        assert tr_state.D.seminorm(result.step) == pytest.approx(Delta, rel=1e-10)

    def test_tracked_T_step(self, linear_solver):
        s = linear_solver
        state = s.reduced_objective_and_gradient(s.initial_iterate())
        result = s.steihaug_step(state, Delta=1e8)
        recomputed = s.apply_T(state, result.step)
        D = state.D
        assert D @ result.T_step == pytest.approx(D @ recomputed, rel=1e-8, abs=1e-12 * np.abs(D @ recomputed).max())

    def test_predicted_decrease_matches_model(self, tr_solver, tr_state):
        """Test pred against -(1/2 <dw, H dw> + J'(w) dw) with H applied afresh."""
        result = tr_solver.steihaug_step(tr_state, Delta=tr_state.Delta)
        pred = tr_solver.predicted_decrease(tr_state, result.step, result.T_step)
        model = -(
            0.5 * result.step @ tr_solver.apply_H(tr_state, result.step)
            + tr_solver.reduced_gradient_load(tr_state) @ result.step
        )
        assert pred == pytest.approx(model, rel=1e-9)
        assert pred > 0


class TestTrustRegionSolve:
    def test_semilinear_coarse_mesh(self, mesh8, semilinear_problem):
        rows = []
        record = trust_region_solve(mesh8, semilinear_problem, on_iteration=rows.append)
        assert record.converged
        assert record.case == 'semilinear'
        assert len(rows) == record.iterations

        accepted = [row['objective'] for row in rows if row['accepted']]
        assert all(b <= a + 1e-12 * abs(a) for a, b in zip(accepted, accepted[1:]))

        for previous, row in zip(rows, rows[1:]):
            if not row['accepted']:
                assert row['radius'] < previous['radius']
                assert row['objective'] == previous['objective']

        for row in rows:
            assert row['accepted'] == (row['rho'] >= 0.25)
        assert record.w is not None and record.xi is not None

    def test_linear_case_single_factorization(self, mesh8, linear_problem):
        record = trust_region_solve(mesh8, linear_problem)
        assert record.converged
        assert record.case == 'linear'
        assert record.factorizations == 1

    def test_iteration_cap(self, mesh8, semilinear_problem):
        record = trust_region_solve(mesh8, semilinear_problem, TRConfig(max_outer=1))
        assert record.iterations == 1
        assert not record.converged

    def test_zero_bound_is_stationary_at_start(self, mesh8):
        problem = build_problem(mesh8, u_bound=0.0, alpha=3.0)
        record = trust_region_solve(mesh8, problem)
        assert record.converged
        assert record.iterations == 0
        assert record.trace == []

    def test_rejections_shrink_the_trial_radius(self, mesh8, semilinear_problem):
        rows = []
        trust_region_solve(mesh8, semilinear_problem, on_iteration=rows.append)
        for row in rows:
            assert row['step_norm'] <= row['trial_radius'] * (1 + 1e-10)
            if not row['accepted']:
                assert row['radius'] < row['trial_radius']
            else:
                assert row['radius'] >= row['trial_radius']


class TestCorrectedObjective:
    def test_removes_first_order_state_error(self, tr_solver, tr_state, rng):
        """J(y) - p^T R(y) changes only at second order in a state perturbation."""
        s = tr_solver
        perturbation = 1e-5 * rng.standard_normal(s.mesh.num_nodes)
        perturbed = tr_state.y + perturbation
        plain_error = abs(s.objective(perturbed) - s.objective(tr_state.y))
        corrected_error = abs(
            s.corrected_objective(perturbed, tr_state.p, tr_state.load)
            - s.corrected_objective(tr_state.y, tr_state.p, tr_state.load)
        )
        assert corrected_error < 1e-2 * plain_error

    def test_exact_state_needs_no_correction(self, mesh8, linear_problem, rng):
        s = TrustRegionSolver(mesh8, linear_problem)
        state = s.reduced_objective_and_gradient(s.initial_iterate())
        assert state.J_value == pytest.approx(s.objective(state.y), rel=1e-12)


class TestRadiusUpdate:
    @pytest.fixture
    def solver(self, tr_solver):
        return tr_solver

    def test_very_successful_step_expands(self, solver):
        accepted, Delta = solver.update_radius(1.0, 1.0, 0.9, 1.0)
        assert accepted and Delta == pytest.approx(2.0)

    def test_interior_very_successful_step_keeps_radius(self, solver):
        accepted, Delta = solver.update_radius(1.0, 0.3, 0.9, 1.0)
        assert accepted and Delta == 1.0

    def test_successful_step_keeps_radius(self, solver):
        accepted, Delta = solver.update_radius(1.0, 1.0, 0.5, 1.0)
        assert accepted and Delta == 1.0

    def test_rejection_halves_the_step(self, solver):
        accepted, Delta = solver.update_radius(1.0, 0.4, 0.1, 1.0)
        assert not accepted and Delta == pytest.approx(0.2)

    def test_rejection_of_zero_step_halves_the_radius(self, solver):
        accepted, Delta = solver.update_radius(1.0, 0.0, float('-inf'), 1.0)
        assert not accepted and Delta == pytest.approx(0.5)

    def test_rejection_floor_relative_to_residual(self, solver):
        # a tiny step would collapse the radius; the floor keeps it at 1e-8 |r|_w
        accepted, Delta = solver.update_radius(1.0, 1e-14, 0.0, 1.0)
        assert not accepted
        assert Delta == pytest.approx(1e-8)

    def test_floor_never_prevents_shrinking(self, solver):
        accepted, Delta = solver.update_radius(1e-9, 1e-9, 0.0, 1.0)
        assert not accepted
        assert Delta == pytest.approx(0.5e-9)

    def test_increase_then_decrease(self, solver):
        _, Delta = solver.update_radius(1.0, 1.0, 0.8, 1.0)
        assert Delta == pytest.approx(2.0)
        accepted, Delta = solver.update_radius(Delta, 2.0, 0.1, 1.0)
        assert not accepted and Delta == pytest.approx(1.0)
