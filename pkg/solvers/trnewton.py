"""
Reduced-space trust-region Newton method for the semilinear bang-bang problem.

The control is parametrized as u = u_b sign(w) and the reduced objective is
J(w) = f(u_b sign(w)) with f(u) = 1/2 ||y(u) - y_d||^2. With the adjoint p = f'(u)
and D = sign'(w) (D w = 0) we have

    J'(w) = u_b D (w + p),

and the target equation is r = w + p = 0. Newton steps solve

    T dw = -r,   T v = v + u_b f''(u) (D v),

by Steihaug CG in the semi-definite bilinear form <a, b>_w = a^T D b, which
makes T self-adjoint. The model Hessian is H(w) v = u_b D T v, a
Gauss-Newton approximation that ignores the derivative of D.
"""

import logging
import time
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from solvers.errors import ConfigError, NonConvergenceError
from solvers.fem import (
    SemilinearProblem,
    SparseSymmetricOperator,
    StateSolver,
    assemble_quadrature_weighted_mass,
    midpoint_values,
)
from solvers.mesh import NodalField, TriangularMesh
from solvers.signum import SignDerivativeMatrix, assemble_sign_derivative, integrate_sign
from utils.run_tracker import LevelRecord, RunCounters

logger = logging.getLogger(__name__)

IterationCallback = Callable[[dict], None]

ROUNDOFF_FACTOR = 100.0


@dataclass(frozen=True)
class TRConfig:
    eta1: float = 0.75
    eta2: float = 0.25
    gamma1: float = 0.5
    gamma2: float = 2.0
    theta1: float = 1.5
    theta2: float = 0.05
    Delta0: Optional[float] = None
    max_outer: int = 500
    gradient_tolerance: float = 1e-9
    load_tolerance: float = 1e-9
    cg_max_iterations: int = 500
    curvature_cutoff: float = 1e-14
    # rejections never shrink the radius below this multiple of |r|_w
    min_radius_ratio: float = 1e-8

    def __post_init__(self):
        if not 0 < self.eta2 <= self.eta1 < 1:
            raise ConfigError("trust-region parameters need 0 < eta2 <= eta1 < 1")
        if not 0 < self.gamma1 < 1 < self.gamma2:
            raise ConfigError("trust-region parameters need 0 < gamma1 < 1 < gamma2")
        if self.theta1 <= 1 or self.theta2 <= 0:
            raise ConfigError("tolerance parameters need theta1 > 1 and theta2 > 0")
        if self.Delta0 is not None and self.Delta0 <= 0:
            raise ConfigError("Delta0 must be positive")
        if self.max_outer < 1 or self.cg_max_iterations < 1:
            raise ConfigError("iteration caps must be positive")
        if not 0 <= self.min_radius_ratio < 1:
            raise ConfigError("min_radius_ratio must lie in [0, 1)")


@dataclass
class TRState:
    """
    Iterate w with state, adjoint and sign derivative consistent with it.

    J_value is the adjoint-corrected objective J(y) - p^T R(y), which removes
    the first-order effect of the state residual R left by the Newton solve.
    """

    w: NodalField
    y: NodalField
    p: NodalField
    J_value: float
    D: SignDerivativeMatrix
    jacobian: SparseSymmetricOperator
    load: np.ndarray
    Delta: float = 1.0

    @property
    def residual(self) -> NodalField:
        return self.w + self.p


@dataclass
class SteihaugResult:
    step: NodalField
    boundary_hit: bool
    cg_iterations: int
    # T applied to step, accumulated by the recursion
    T_step: NodalField
    capped: bool = False


class TrustRegionSolver:
    """Algorithm state and operators of the trust-region method on one mesh."""

    def __init__(
        self,
        mesh: TriangularMesh,
        problem: SemilinearProblem,
        config: Optional[TRConfig] = None,
        counters: Optional[RunCounters] = None,
    ):
        self.mesh = mesh
        self.problem = problem
        self.config = config or TRConfig()
        self.counters = counters if counters is not None else RunCounters()
        self.states = StateSolver(mesh, problem, self.counters)

    @property
    def mass(self):
        return self.states.mass

    def objective(self, y: NodalField) -> float:
        deviation = y - self.problem.y_d
        return 0.5 * float(deviation @ (self.mass @ deviation))

    def control_load(self, w: NodalField) -> np.ndarray:
        return self.problem.u_bound * integrate_sign(self.mesh, w)

    def corrected_objective(self, y: NodalField, p: NodalField, load: np.ndarray) -> float:
        """J(y) - p^T R(y), accurate to second order in the state solve error."""
        return self.objective(y) - float(p @ self.states.state_residual(y, load))

    def solve_state(
        self, w: NodalField, y_init: Optional[NodalField] = None, load: Optional[np.ndarray] = None
    ) -> NodalField:
        """State for u = u_b sign(w), restarting from y = 0 if Newton fails."""
        if load is None:
            load = self.control_load(w)
        try:
            return self.states.solve_semilinear_state(load, y_init)
        except NonConvergenceError:
            if y_init is None:
                raise
            logger.warning("state Newton failed from the previous state; restarting from y = 0")
            return self.states.solve_semilinear_state(load, None)

    def _complete(self, w: NodalField, y: NodalField, load: np.ndarray, Delta: float = 1.0) -> TRState:
        p = self.states.solve_adjoint(y)
        return TRState(
            w=w,
            y=y,
            p=p,
            J_value=self.corrected_objective(y, p, load),
            D=assemble_sign_derivative(self.mesh, w),
            jacobian=self.states.jacobian(y),
            load=load,
            Delta=Delta,
        )

    def reduced_objective_and_gradient(self, w: NodalField, y_init: Optional[NodalField] = None) -> TRState:
        """J(w), y, p and D(w); r = w + p and J'(w) = u_b D r are read off the state."""
        w = np.asarray(w, dtype=float)
        load = self.control_load(w)
        return self._complete(w, self.solve_state(w, y_init, load), load)

    def reduced_gradient_load(self, state: TRState) -> np.ndarray:
        return self.problem.u_bound * (state.D @ state.residual)

    def apply_f_second(
        self,
        y: NodalField,
        p: NodalField,
        load: np.ndarray,
        jacobian: Optional[SparseSymmetricOperator] = None,
    ) -> NodalField:
        """f''(u) applied to a load: A(y)^{-1} W[1 - a''(y) p] A(y)^{-1} load."""
        if jacobian is None:
            jacobian = self.states.jacobian(y)
        direction = jacobian.solve(load, self.counters)
        if self.problem.is_linear:
            weighted = self.mass @ direction
        else:
            coefficient = 1.0 - self.problem.a_second(midpoint_values(self.mesh, y)) * midpoint_values(
                self.mesh, p
            )
            weighted = assemble_quadrature_weighted_mass(self.mesh, coefficient) @ direction
        return jacobian.solve(weighted, self.counters)

    def apply_T(self, state: TRState, v: NodalField) -> NodalField:
        """Newton operator v + u_b f''(u)(D v)."""
        return v + self.problem.u_bound * self.apply_f_second(
            state.y, state.p, state.D @ v, state.jacobian
        )

    def apply_H(self, state: TRState, v: NodalField) -> np.ndarray:
        """Gauss-Newton model Hessian u_b D (v + u_b f''(u) D v), as a load vector."""
        return self.problem.u_bound * (state.D @ self.apply_T(state, v))

    def steihaug_tolerance(self, state: TRState) -> float:
        # measured with w - f'(u); equals |r|_w because D w = 0
        base = state.D.seminorm(state.w - state.p)
        return min(base**self.config.theta1, self.config.theta2 * base)

    def steihaug_step(self, state: TRState, Delta: Optional[float] = None) -> SteihaugResult:
        """Truncated CG for T dw = -r in <., .>_w inside ||dw||_w <= Delta."""
        Delta = state.Delta if Delta is None else Delta
        D = state.D
        tolerance = self.steihaug_tolerance(state)

        step = np.zeros(self.mesh.num_nodes)
        T_step = np.zeros(self.mesh.num_nodes)
        gradient = state.residual.copy()
        direction = -gradient
        gg = D.inner(gradient, gradient)
        if np.sqrt(max(gg, 0.0)) <= tolerance:
            return SteihaugResult(step, False, 0, T_step)
        cutoff = self.config.curvature_cutoff * gg

        for iteration in range(1, self.config.cg_max_iterations + 1):
            dd = D.inner(direction, direction)
            if dd <= cutoff:
                self.counters.add_cg_iterations(iteration - 1)
                return SteihaugResult(step, False, iteration - 1, T_step)

            T_direction = self.apply_T(state, direction)
            curvature = D.inner(direction, T_direction)
            if curvature > 0:
                alpha = gg / curvature
                candidate = step + alpha * direction
            if curvature <= 0 or D.seminorm(candidate) >= Delta:
                sigma = _boundary_root(D.inner(step, step), D.inner(step, direction), dd, Delta)
                self.counters.add_cg_iterations(iteration)
                return SteihaugResult(
                    step + sigma * direction, True, iteration, T_step + sigma * T_direction
                )

            step = candidate
            T_step = T_step + alpha * T_direction
            gradient = gradient + alpha * T_direction
            gg_new = D.inner(gradient, gradient)
            if np.sqrt(max(gg_new, 0.0)) <= tolerance:
                self.counters.add_cg_iterations(iteration)
                return SteihaugResult(step, False, iteration, T_step)
            direction = -gradient + (gg_new / gg) * direction
            gg = gg_new

        logger.warning("Steihaug CG reached %d iterations", self.config.cg_max_iterations)
        self.counters.add_cg_iterations(self.config.cg_max_iterations)
        return SteihaugResult(step, False, self.config.cg_max_iterations, T_step, capped=True)

    def predicted_decrease(self, state: TRState, step: NodalField, T_step: NodalField) -> float:
        """pred = -(1/2 <dw, H dw> + J'(w) dw)."""
        D = state.D
        return -self.problem.u_bound * (0.5 * D.inner(step, T_step) + D.inner(state.residual, step))

    def is_stationary(self, state: TRState) -> bool:
        if self.problem.u_bound == 0:
            # J'(w) = u_b D r vanishes identically
            return True
        residual = state.residual
        return (
            state.D.seminorm(residual) <= self.config.gradient_tolerance
            and np.max(np.abs(state.D @ residual), initial=0.0) <= self.config.load_tolerance
        )

    def update_radius(
        self, Delta: float, step_norm: float, rho: float, residual_norm: float
    ) -> Tuple[bool, float]:
        """
        Acceptance and next radius for a step of length step_norm taken with
        radius Delta. A rejection shrinks the radius strictly but not below
        min_radius_ratio * |r|_w unless the step itself was shorter.
        """
        config = self.config
        if rho >= config.eta2:
            if rho >= config.eta1:
                return True, max(Delta, config.gamma2 * step_norm)
            return True, Delta
        shrunk = config.gamma1 * (step_norm if step_norm > 0 else Delta)
        floor = min(config.min_radius_ratio * residual_norm, config.gamma1 * Delta)
        return False, max(shrunk, floor)

    def initial_iterate(self) -> NodalField:
        """w0 = -p for the zero control."""
        y = self.states.solve_semilinear_state(np.zeros(self.mesh.num_nodes))
        return -self.states.solve_adjoint(y)

    def solve(self, w0: Optional[NodalField] = None, on_iteration: Optional[IterationCallback] = None) -> LevelRecord:
        """Trust-region globalization of the reduced Newton method."""
        config = self.config
        start = time.perf_counter()
        record = LevelRecord(
            case='linear' if self.problem.is_linear else 'semilinear',
            n=self.mesh.n,
            nodes=self.mesh.num_nodes,
            u_bound=self.problem.u_bound,
        )

        w = self.initial_iterate() if w0 is None else np.array(w0, dtype=float)
        state = self.reduced_objective_and_gradient(w)
        state.Delta = config.Delta0 or max(1.0, state.D.seminorm(state.residual))

        for iteration in range(1, config.max_outer + 1):
            if self.is_stationary(state):
                record.converged = True
                break

            result = self.steihaug_step(state)
            pred = self.predicted_decrease(state, result.step, result.T_step)
            step_norm = state.D.seminorm(result.step)
            trial_w = state.w + result.step
            trial_load = self.control_load(trial_w)
            try:
                trial_y = self.solve_state(trial_w, state.y, trial_load)
                trial_J = self.corrected_objective(trial_y, state.p, trial_load)
            except NonConvergenceError as exc:
                logger.warning("trial state solve failed: %s", exc)
                trial_y, trial_J = None, float('inf')
            ared = state.J_value - trial_J

            roundoff = ROUNDOFF_FACTOR * np.finfo(float).eps * max(1.0, abs(state.J_value))
            if pred <= 0 or trial_y is None:
                rho = float('-inf')
            elif pred <= roundoff and abs(ared) <= roundoff:
                rho = 1.0
            else:
                rho = ared / pred

            trial_radius = state.Delta
            accepted, Delta = self.update_radius(
                trial_radius, step_norm, rho, state.D.seminorm(state.residual)
            )
            if accepted:
                state = self._complete(trial_w, trial_y, trial_load, Delta)
            else:
                state.Delta = Delta

            record.iterations = iteration
            row = {
                'iteration': iteration,
                'objective': state.J_value,
                'residual': state.D.seminorm(state.residual),
                'radius': state.Delta,
                'trial_radius': trial_radius,
                'rho': rho,
                'pred': pred,
                'ared': ared,
                'step_norm': step_norm,
                'cg_iterations': result.cg_iterations,
                'boundary_hit': result.boundary_hit,
                'accepted': accepted,
                'degenerate': int(state.D.degenerate.size),
                **self.counters.snapshot(),
            }
            record.trace.append(row)
            if on_iteration is not None:
                on_iteration(row)
        else:
            record.converged = self.is_stationary(state)

        if not record.converged:
            logger.warning("trust-region method stopped after %d iterations", record.iterations)
        record.objective = state.J_value
        record.degenerate_elements = int(state.D.degenerate.size)
        record.boundary_cut_elements = state.D.level_set.boundary_cut_elements
        record.w = state.w
        record.xi = state.p
        record.finish(self.counters, time.perf_counter() - start)
        return record


def _boundary_root(ss: float, sd: float, dd: float, Delta: float) -> float:
    """Positive sigma with <s + sigma d, s + sigma d>_w = Delta^2."""
    c = ss - Delta**2
    discriminant = np.sqrt(max(sd * sd - dd * c, 0.0))
    if sd > 0:
        return -c / (sd + discriminant)
    return (discriminant - sd) / dd


def trust_region_solve(
    mesh: TriangularMesh,
    problem: SemilinearProblem,
    config: Optional[TRConfig] = None,
    on_iteration: Optional[IterationCallback] = None,
    counters: Optional[RunCounters] = None,
) -> LevelRecord:
    return TrustRegionSolver(mesh, problem, config, counters).solve(on_iteration=on_iteration)
