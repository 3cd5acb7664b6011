"""
P1 finite-element operators and state/adjoint solves with Neumann conditions.

All matrices are assembled with natural (Neumann) boundary conditions; no
boundary rows are eliminated. State equation:

    -Laplace(y) + a(y) = u,   a(y) = 10 y + alpha y^3.
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from itertools import product
from math import factorial
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

try:
    from sksparse.cholmod import CholmodError, cholesky
except ImportError:  # optional: scikit-sparse
    cholesky = None

from solvers.errors import FactorizationError, NonConvergenceError
from solvers.mesh import NodalField, TriangularMesh, interpolate
from utils.run_tracker import RunCounters

logger = logging.getLogger(__name__)

MASS_REFERENCE = (np.ones((3, 3)) + np.eye(3)) / 12.0

# Barycentric coordinates of the three edge midpoints; row q is the midpoint
# of the edge opposite vertex q.
MIDPOINT_BASIS = 0.5 * (np.ones((3, 3)) - np.eye(3))


def _triple_products() -> np.ndarray:
    """Integrals of lambda_i lambda_j lambda_k over a triangle, divided by its area."""
    table = np.empty((3, 3, 3))
    for index in product(range(3), repeat=3):
        multiplicities = Counter(index).values()
        table[index] = np.prod([factorial(m) for m in multiplicities]) / 60.0
    return table


TRIPLE_PRODUCTS = _triple_products()


class SparseSymmetricOperator:
    """
    Assembled symmetric sparse matrix with a lazily cached direct factorization.

    Positive definite operators are factored by CHOLMOD when scikit-sparse is
    installed and by SuperLU otherwise.
    """

    def __init__(self, matrix, positive_definite: bool = False):
        self.matrix = sp.csr_matrix(matrix)
        self.positive_definite = positive_definite
        self._factor = None

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_factorized(self) -> bool:
        return self._factor is not None

    def __matmul__(self, vector):
        return self.matrix @ vector

    def __add__(self, other: "SparseSymmetricOperator") -> "SparseSymmetricOperator":
        return SparseSymmetricOperator(self.matrix + other.matrix)

    def __mul__(self, scalar: float) -> "SparseSymmetricOperator":
        return SparseSymmetricOperator(self.matrix * scalar)

    __rmul__ = __mul__

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def factorize(self, counters: Optional[RunCounters] = None) -> None:
        if self._factor is not None:
            return
        if self.positive_definite and cholesky is not None:
            try:
                self._factor = cholesky(self.matrix.tocsc())
            except CholmodError as exc:
                raise FactorizationError(f"sparse Cholesky factorization failed: {exc}") from exc
        else:
            try:
                self._factor = splu(
                    self.matrix.tocsc(),
                    permc_spec="MMD_AT_PLUS_A",
                    diag_pivot_thresh=0.0,
                    options={"SymmetricMode": True},
                ).solve
            except RuntimeError as exc:
                raise FactorizationError(f"sparse factorization failed: {exc}") from exc
        if counters is not None:
            counters.add_factorization()

    def solve(self, rhs: np.ndarray, counters: Optional[RunCounters] = None) -> np.ndarray:
        """Solve with the cached factorization; one call is one counted solve."""
        self.factorize(counters)
        if counters is not None:
            counters.add_solve()
        return self._factor(np.asarray(rhs, dtype=float))


def assemble_from_local(mesh: TriangularMesh, local: np.ndarray, elements=None) -> SparseSymmetricOperator:
    """Sum element matrices of shape (E, 3, 3) into a global symmetric operator."""
    if elements is None:
        elements = mesh.elements
    rows = np.repeat(elements, 3, axis=1).ravel()
    cols = np.tile(elements, (1, 3)).ravel()
    matrix = sp.coo_matrix(
        (local.ravel(), (rows, cols)), shape=(mesh.num_nodes, mesh.num_nodes)
    ).tocsr()
    # averaging with the transpose makes the stored pattern exactly symmetric
    return SparseSymmetricOperator(0.5 * (matrix + matrix.T))


def assemble_mass(mesh: TriangularMesh) -> SparseSymmetricOperator:
    """Consistent P1 mass matrix."""
    local = mesh.element_area[:, None, None] * MASS_REFERENCE
    return assemble_from_local(mesh, local)


def assemble_stiffness(mesh: TriangularMesh) -> SparseSymmetricOperator:
    """Neumann stiffness matrix K_ij = int grad(phi_i) . grad(phi_j)."""
    grads = mesh.basis_gradients
    local = mesh.element_area[:, None, None] * np.einsum("eid,ejd->eij", grads, grads)
    return assemble_from_local(mesh, local)


def assemble_weighted_mass(mesh: TriangularMesh, c: NodalField) -> SparseSymmetricOperator:
    """Exact integrals of c_h phi_i phi_j for the P1 interpolant c_h of c."""
    c = np.asarray(c, dtype=float)
    local = mesh.element_area[:, None, None] * np.einsum(
        "ijk,ek->eij", TRIPLE_PRODUCTS, c[mesh.elements]
    )
    return assemble_from_local(mesh, local)


def midpoint_values(mesh: TriangularMesh, y: NodalField) -> np.ndarray:
    """Values of the P1 interpolant at the three edge midpoints of every element."""
    return y[mesh.elements] @ MIDPOINT_BASIS.T


def assemble_quadrature_weighted_mass(mesh: TriangularMesh, coefficient: np.ndarray) -> SparseSymmetricOperator:
    """
    Weighted mass matrix from coefficient values at the edge midpoints, shape (E, 3).

    The midpoint rule is exact for quadratics, so a constant coefficient
    reproduces the consistent mass matrix.
    """
    local = (mesh.element_area / 3.0)[:, None, None] * np.einsum(
        "eq,qi,qj->eij", coefficient, MIDPOINT_BASIS, MIDPOINT_BASIS
    )
    return assemble_from_local(mesh, local)


def quadrature_load(mesh: TriangularMesh, values: np.ndarray) -> np.ndarray:
    """Load vector of a function given at the edge midpoints, shape (E, 3)."""
    local = (mesh.element_area / 3.0)[:, None] * (values @ MIDPOINT_BASIS)
    return np.bincount(mesh.elements.ravel(), weights=local.ravel(), minlength=mesh.num_nodes)


def desired_state(x1, x2):
    return (
        2.0 * np.sin(2.0 * np.pi * (x1 + 1.0) / 2.0) * np.cos(2.0 * np.pi * x2)
        + 0.8 * (x2 + x1**2)
        - 0.5
    )


@dataclass(frozen=True, eq=False)
class SemilinearProblem:
    """Problem data for min 1/2 ||y - y_d||^2 s.t. -Laplace(y) + a(y) = u, |u| <= u_b."""

    alpha: float
    u_bound: float
    y_d: NodalField = field(repr=False)
    linear_coefficient: float = 10.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be nonnegative, got {self.alpha}")
        if self.u_bound < 0:
            raise ValueError(f"u_bound must be nonnegative, got {self.u_bound}")

    @property
    def is_linear(self) -> bool:
        return self.alpha == 0

    def a(self, y):
        return self.linear_coefficient * y + self.alpha * y**3

    def a_prime(self, y):
        return self.linear_coefficient + 3.0 * self.alpha * y**2

    def a_second(self, y):
        return 6.0 * self.alpha * y


def build_problem(mesh: TriangularMesh, u_bound: float, alpha: float = 0.0, y_d=None) -> SemilinearProblem:
    """Problem on mesh with the standard desired state unless y_d is given."""
    if y_d is None:
        y_d = interpolate(mesh, desired_state)
    return SemilinearProblem(alpha=float(alpha), u_bound=float(u_bound), y_d=np.asarray(y_d, dtype=float))


class StateSolver:
    """
    Control-to-state map, semilinear state solve and adjoint solve on one mesh.

    Factorizations are cached: the linear operator K + 10 M is factored once;
    the Jacobian A(y) = K + W[a'(y)] is factored once per distinct state y.
    """

    def __init__(
        self,
        mesh: TriangularMesh,
        problem: SemilinearProblem,
        counters: Optional[RunCounters] = None,
        max_newton_steps: int = 50,
        max_halvings: int = 30,
        newton_tolerance: float = 1e-11,
        increment_tolerance: float = 1e-12,
    ):
        self.mesh = mesh
        self.problem = problem
        self.counters = counters if counters is not None else RunCounters()
        self.max_newton_steps = max_newton_steps
        self.max_halvings = max_halvings
        self.newton_tolerance = newton_tolerance
        self.increment_tolerance = increment_tolerance
        self.mass = assemble_mass(mesh)
        self.stiffness = assemble_stiffness(mesh)
        self._linear_operator = None
        self._jacobian = None

    @property
    def linear_operator(self) -> SparseSymmetricOperator:
        if self._linear_operator is None:
            matrix = (self.stiffness + self.problem.linear_coefficient * self.mass).matrix
            self._linear_operator = SparseSymmetricOperator(matrix, positive_definite=True)
        return self._linear_operator

    def apply_S_load(self, load: np.ndarray) -> NodalField:
        """Linear control-to-state map applied to a load vector: (K + 10 M) y = load."""
        return self.linear_operator.solve(load, self.counters)

    def apply_S_adjoint(self, xi: NodalField) -> NodalField:
        """S* of an L2 function; the discrete S is self-adjoint, so this is S(M xi)."""
        return self.apply_S_load(self.mass @ xi)

    def state_residual(self, y: NodalField, rhs: np.ndarray) -> np.ndarray:
        nonlinear = quadrature_load(self.mesh, self.problem.a(midpoint_values(self.mesh, y)))
        return self.stiffness @ y + nonlinear - rhs

    def jacobian(self, y: NodalField) -> SparseSymmetricOperator:
        """A(y) = K + W[a'(y)], cached for the most recent y."""
        if self.problem.is_linear:
            return self.linear_operator
        if self._jacobian is not None and np.array_equal(self._jacobian[0], y):
            return self._jacobian[1]
        coefficient = self.problem.a_prime(midpoint_values(self.mesh, y))
        # a' > 0, so A(y) is positive definite
        operator = SparseSymmetricOperator(
            (self.stiffness + assemble_quadrature_weighted_mass(self.mesh, coefficient)).matrix,
            positive_definite=True,
        )
        self._jacobian = (np.array(y, copy=True), operator)
        return operator

    def solve_semilinear_state(self, rhs: np.ndarray, y_init: Optional[NodalField] = None) -> NodalField:
        """
        Damped Newton method for K y + int a(y_h) phi = rhs.

        Every Newton step factors A(y) once. The iteration stops at a state
        whose residual is below the tolerance and whose Newton increment is
        negligible or has stopped shrinking; A(y) of the returned state is the
        cached Jacobian.
        Raises NonConvergenceError after max_newton_steps.
        """
        if self.problem.is_linear:
            return self.apply_S_load(rhs)

        y = np.zeros(self.mesh.num_nodes) if y_init is None else np.array(y_init, dtype=float)
        tolerance = self.newton_tolerance * (1.0 + np.max(np.abs(rhs)))
        residual = self.state_residual(y, rhs)
        norm = np.max(np.abs(residual))

        previous_increment = None
        for step in range(self.max_newton_steps):
            if norm == 0.0:
                return y
            delta = self.jacobian(y).solve(residual, self.counters)
            increment = np.max(np.abs(delta))
            if norm <= tolerance and (
                increment <= self.increment_tolerance * (1.0 + np.max(np.abs(y)))
                or (previous_increment is not None and increment >= 0.5 * previous_increment)
            ):
                return y
            previous_increment = increment
            damping = 1.0
            for _ in range(self.max_halvings + 1):
                trial = y - damping * delta
                trial_residual = self.state_residual(trial, rhs)
                trial_norm = np.max(np.abs(trial_residual))
                if trial_norm < norm:
                    break
                damping *= 0.5
            else:
                if norm <= tolerance:
                    return y
                logger.warning(
                    "state Newton step %d: no residual decrease after %d halvings",
                    step, self.max_halvings,
                )
            y, residual, norm = trial, trial_residual, trial_norm

        if norm <= tolerance:
            return y
        raise NonConvergenceError(
            f"semilinear state solve did not converge in {self.max_newton_steps} steps "
            f"(residual {norm:.3e})",
            residual=norm,
        )

    def solve_adjoint(self, y: NodalField) -> NodalField:
        """Solve (K + W[a'(y)]) p = M (y - y_d)."""
        return self.jacobian(y).solve(self.mass @ (y - self.problem.y_d), self.counters)
