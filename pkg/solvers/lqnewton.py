"""
Semismooth Newton method for the linear-quadratic bang-bang problem.

With the dual variable xi = y_d - S u and u = u_b sign(S* xi) the optimality
condition reads

    F(xi) = xi + u_b S sign(S* xi) - y_d = 0.

Newton steps use G(xi) = I + u_b S sign'(S* xi) S*, which is self-adjoint and
positive definite in the M-inner product, so the Newton systems are solved
inexactly by conjugate gradients. Steps are globalized by an Armijo line
search on the merit function

    Phi(xi) = 1/2 ||xi - y_d||^2 + u_b ||S* xi||_L1,

whose gradient is F wherever {S* xi = 0} has measure zero.
"""

import logging
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from solvers.errors import ConfigError
from solvers.fem import SemilinearProblem, StateSolver
from solvers.mesh import NodalField, TriangularMesh
from solvers.signum import (
    SignDerivativeMatrix,
    assemble_sign_derivative,
    extract_zero_levelset,
    integrate_sign,
    l1_norm,
)
from utils.run_tracker import LevelRecord, RunCounters

logger = logging.getLogger(__name__)

IterationCallback = Callable[[dict], None]


@dataclass(frozen=True)
class LQConfig:
    tolerance: float = 1e-10
    max_iterations: int = 200
    cg_max_iterations: int = 500
    forcing_cap: float = 0.1
    armijo_sigma: float = 1e-4
    max_halvings: int = 30
    # run exactly this many outer iterations and report converged=False unless F vanished
    fixed_iterations: Optional[int] = None

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ConfigError("tolerance must be positive")
        if self.max_iterations < 1 or self.cg_max_iterations < 1:
            raise ConfigError("iteration caps must be positive")
        if not 0 < self.forcing_cap < 1:
            raise ConfigError("forcing_cap must lie in (0, 1)")
        if not 0 < self.armijo_sigma < 1:
            raise ConfigError("armijo_sigma must lie in (0, 1)")


@dataclass(frozen=True)
class FixedPointConfig:
    tolerance: float = 1e-10
    max_iterations: int = 1000
    divergence_factor: float = 1e6

    def __post_init__(self):
        if self.tolerance <= 0 or self.max_iterations < 1 or self.divergence_factor <= 1:
            raise ConfigError("invalid fixed-point configuration")


@dataclass
class LQState:
    """Iterate xi with everything derived from it; xi is the single source of truth."""

    xi: NodalField
    w: NodalField
    residual: NodalField
    residual_norm: float
    merit: float
    state: NodalField


class SemismoothNewtonSolver:
    """Newton and fixed-point iterations for F(xi) = 0 on one mesh."""

    def __init__(
        self,
        mesh: TriangularMesh,
        problem: SemilinearProblem,
        config: Optional[LQConfig] = None,
        counters: Optional[RunCounters] = None,
    ):
        if not problem.is_linear:
            raise ConfigError("the semismooth Newton solver requires alpha = 0")
        self.mesh = mesh
        self.problem = problem
        self.config = config or LQConfig()
        self.counters = counters if counters is not None else RunCounters()
        self.states = StateSolver(mesh, problem, self.counters)

    @property
    def mass(self):
        return self.states.mass

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(a @ (self.mass @ b))

    def norm(self, v: np.ndarray) -> float:
        return float(np.sqrt(max(self.inner(v, v), 0.0)))

    def residual_F(self, xi: NodalField):
        """Return F(xi) and w = S* xi."""
        w = self.states.apply_S_adjoint(xi)
        residual, _ = self._residual_from_w(xi, w)
        return residual, w

    def _residual_from_w(self, xi: NodalField, w: NodalField):
        state = self.problem.u_bound * self.states.apply_S_load(integrate_sign(self.mesh, w))
        return xi + state - self.problem.y_d, state

    def merit_Phi(self, xi: NodalField, w: NodalField) -> float:
        deviation = xi - self.problem.y_d
        return 0.5 * self.inner(deviation, deviation) + self.problem.u_bound * l1_norm(self.mesh, w)

    def evaluate(self, xi: NodalField, w: Optional[NodalField] = None) -> LQState:
        if w is None:
            w = self.states.apply_S_adjoint(xi)
        residual, state = self._residual_from_w(xi, w)
        return LQState(
            xi=xi,
            w=w,
            residual=residual,
            residual_norm=self.norm(residual),
            merit=self.merit_Phi(xi, w),
            state=state,
        )

    def apply_G(self, delta: np.ndarray, derivative: SignDerivativeMatrix) -> np.ndarray:
        """G(xi) delta = delta + u_b S D(w) S* delta; two counted solves."""
        return delta + self.problem.u_bound * self.states.apply_S_load(
            derivative @ self.states.apply_S_adjoint(delta)
        )

    def newton_step(self, xi: NodalField, w: NodalField, residual: NodalField, derivative=None):
        """
        Inexact solve of G(xi) delta = -F(xi) by CG in the M-inner product.

        Returns (delta, cg_iterations, capped); capped is set when the
        iteration cap was reached before the forcing tolerance.
        """
        if derivative is None:
            derivative = assemble_sign_derivative(self.mesh, w)
        residual_norm = self.norm(residual)
        target = min(self.config.forcing_cap, np.sqrt(residual_norm)) * residual_norm

        delta = np.zeros_like(residual)
        r = -residual
        direction = r.copy()
        rr = self.inner(r, r)
        if np.sqrt(rr) <= target or rr == 0.0:
            return delta, 0, False

        for iteration in range(1, self.config.cg_max_iterations + 1):
            image = self.apply_G(direction, derivative)
            step = rr / self.inner(direction, image)
            delta += step * direction
            r -= step * image
            rr_new = self.inner(r, r)
            if np.sqrt(rr_new) <= target:
                self.counters.add_cg_iterations(iteration)
                return delta, iteration, False
            direction = r + (rr_new / rr) * direction
            rr = rr_new

        logger.warning("CG reached %d iterations before the forcing tolerance", self.config.cg_max_iterations)
        self.counters.add_cg_iterations(self.config.cg_max_iterations)
        return delta, self.config.cg_max_iterations, True

    def solve(
        self, xi0: Optional[NodalField] = None, on_iteration: Optional[IterationCallback] = None
    ) -> LevelRecord:
        """Globalized semismooth Newton iteration xi_{k+1} = xi_k + s_k delta_k."""
        config = self.config
        start = time.perf_counter()
        record = LevelRecord(
            case='linear', n=self.mesh.n, nodes=self.mesh.num_nodes, u_bound=self.problem.u_bound
        )

        current = self.evaluate(np.array(self.problem.y_d if xi0 is None else xi0, dtype=float))
        history = [current.xi]
        limit = config.fixed_iterations or config.max_iterations

        for iteration in range(1, limit + 1):
            if current.residual_norm <= config.tolerance:
                record.converged = True
                break

            derivative = assemble_sign_derivative(self.mesh, current.w)
            delta, cg_iterations, capped = self.newton_step(
                current.xi, current.w, current.residual, derivative
            )
            slope = self.inner(current.residual, delta)

            step = 1.0
            for _ in range(config.max_halvings + 1):
                trial_xi = current.xi + step * delta
                trial_w = self.states.apply_S_adjoint(trial_xi)
                trial_merit = self.merit_Phi(trial_xi, trial_w)
                if trial_merit <= current.merit + config.armijo_sigma * step * slope:
                    break
                step *= 0.5
            else:
                logger.warning("Armijo search exhausted at iteration %d; taking the last trial", iteration)
                record.warnings.append(f"armijo exhausted at iteration {iteration}")

            current = self.evaluate(trial_xi, trial_w)
            history.append(current.xi)
            record.iterations = iteration
            row = {
                'iteration': iteration,
                'residual': current.residual_norm,
                'merit': current.merit,
                'step': step,
                'cg_iterations': cg_iterations,
                'cg_capped': capped,
                'degenerate': int(derivative.degenerate.size),
                **self.counters.snapshot(),
            }
            record.trace.append(row)
            if on_iteration is not None:
                on_iteration(row)
        else:
            record.converged = current.residual_norm <= config.tolerance

        if not record.converged:
            logger.warning(
                "semismooth Newton stopped after %d iterations with |F| = %.3e",
                record.iterations, current.residual_norm,
            )
        for row, factor in zip(record.trace, contraction_factors(history, self.norm)):
            row['contraction'] = factor

        self._finalize(record, current.xi, current.w, current.state)
        record.finish(self.counters, time.perf_counter() - start)
        return record

    def fixed_point(
        self, config: Optional[FixedPointConfig] = None, on_iteration: Optional[IterationCallback] = None
    ) -> LevelRecord:
        """Iterate xi_{k+1} = y_d - u_b S sign(S* xi_k) starting at y_d."""
        config = config or FixedPointConfig()
        start = time.perf_counter()
        record = LevelRecord(
            case='fixed-point', n=self.mesh.n, nodes=self.mesh.num_nodes, u_bound=self.problem.u_bound
        )
        y_d = self.problem.y_d
        bound = config.divergence_factor * max(self.norm(y_d), np.finfo(float).tiny)

        xi = np.array(y_d, dtype=float)
        previous_step = None
        for iteration in range(1, config.max_iterations + 1):
            w = self.states.apply_S_adjoint(xi)
            state = self.problem.u_bound * self.states.apply_S_load(integrate_sign(self.mesh, w))
            updated = y_d - state
            step = self.norm(updated - xi)
            contraction = step / previous_step if previous_step else float('nan')
            xi, previous_step = updated, step
            record.iterations = iteration
            row = {'iteration': iteration, 'residual': step, 'contraction': contraction,
                   **self.counters.snapshot()}
            record.trace.append(row)
            if on_iteration is not None:
                on_iteration(row)
            if step <= config.tolerance:
                record.converged = True
                break
            if self.norm(xi) > bound:
                record.diverged = True
                logger.warning("fixed-point iteration diverged at iteration %d", iteration)
                break

        w = self.states.apply_S_adjoint(xi)
        state = self.problem.u_bound * self.states.apply_S_load(integrate_sign(self.mesh, w))
        self._finalize(record, xi, w, state)
        record.finish(self.counters, time.perf_counter() - start)
        return record

    def _finalize(self, record: LevelRecord, xi, w, state):
        level_set = extract_zero_levelset(self.mesh, w)
        deviation = state - self.problem.y_d
        record.objective = 0.5 * self.inner(deviation, deviation)
        record.degenerate_elements = int(level_set.degenerate.size)
        record.boundary_cut_elements = level_set.boundary_cut_elements
        record.xi = xi
        record.w = w


def contraction_factors(history, norm) -> list:
    """Ratios |x_{k+1} - x_K| / |x_k - x_K| against the final iterate x_K."""
    final = history[-1]
    distances = [norm(x - final) for x in history]
    return [
        distances[k + 1] / distances[k] if distances[k] > 0 else 0.0
        for k in range(len(history) - 1)
    ]


def solve_linear_quadratic(
    mesh: TriangularMesh,
    problem: SemilinearProblem,
    config: Optional[LQConfig] = None,
    on_iteration: Optional[IterationCallback] = None,
    counters: Optional[RunCounters] = None,
) -> LevelRecord:
    return SemismoothNewtonSolver(mesh, problem, config, counters).solve(on_iteration=on_iteration)


def fixed_point_solve(
    mesh: TriangularMesh,
    problem: SemilinearProblem,
    config: Optional[FixedPointConfig] = None,
    on_iteration: Optional[IterationCallback] = None,
    counters: Optional[RunCounters] = None,
) -> LevelRecord:
    return SemismoothNewtonSolver(mesh, problem, counters=counters).fixed_point(config, on_iteration)
