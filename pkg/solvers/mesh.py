"""
Structured P1 triangulation of the square (-1, 1)^2.

Nodes are numbered lexicographically by (x2, x1); every grid cell is split
along its lower-left to upper-right diagonal into a lower and an upper
triangle, stored as elements 2c and 2c + 1 for cell c = j * n + i.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from solvers.errors import MeshError

# A P1 finite-element function is its vector of vertex values.
NodalField = np.ndarray

DOMAIN_AREA = 4.0


@dataclass(frozen=True, eq=False)
class TriangularMesh:
    """Uniform triangulation with per-element geometry precomputed."""

    n: int
    nodes: np.ndarray = field(repr=False)
    elements: np.ndarray = field(repr=False)
    element_area: np.ndarray = field(repr=False)
    basis_gradients: np.ndarray = field(repr=False)

    @property
    def h(self) -> float:
        return 2.0 / self.n

    @property
    def num_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def num_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def boundary_nodes(self) -> np.ndarray:
        """Boolean mask of nodes on the boundary of the square."""
        return np.any(np.isclose(np.abs(self.nodes), 1.0), axis=1)

    @property
    def boundary_elements(self) -> np.ndarray:
        """Boolean mask of elements with at least one vertex on the boundary."""
        return self.boundary_nodes[self.elements].any(axis=1)


def build_uniform_mesh(n: int) -> TriangularMesh:
    """Triangulate (-1, 1)^2 with n subdivisions per axis."""
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise MeshError(f"number of subdivisions must be a positive integer, got {n!r}")
    n = int(n)

    ticks = np.linspace(-1.0, 1.0, n + 1)
    x1, x2 = np.meshgrid(ticks, ticks)  # rows vary x2, columns vary x1
    nodes = np.column_stack([x1.ravel(), x2.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    lower_left = (j * (n + 1) + i).ravel()
    lower_right = lower_left + 1
    upper_left = lower_left + n + 1
    upper_right = upper_left + 1

    elements = np.empty((2 * n * n, 3), dtype=np.int64)
    elements[0::2] = np.column_stack([lower_left, lower_right, upper_right])
    elements[1::2] = np.column_stack([lower_left, upper_right, upper_left])

    vertices = nodes[elements]
    edges = np.stack([vertices[:, 1] - vertices[:, 0], vertices[:, 2] - vertices[:, 0]], axis=2)
    determinant = np.linalg.det(edges)
    element_area = 0.5 * np.abs(determinant)

    # rows of edges^{-1} are the gradients of the barycentric coordinates 1 and 2
    inverse = np.linalg.inv(edges)
    basis_gradients = np.empty((elements.shape[0], 3, 2))
    basis_gradients[:, 1] = inverse[:, 0, :]
    basis_gradients[:, 2] = inverse[:, 1, :]
    basis_gradients[:, 0] = -(basis_gradients[:, 1] + basis_gradients[:, 2])

    mesh = TriangularMesh(
        n=n,
        nodes=nodes,
        elements=elements,
        element_area=element_area,
        basis_gradients=basis_gradients,
    )
    for array in (mesh.nodes, mesh.elements, mesh.element_area, mesh.basis_gradients):
        array.setflags(write=False)
    return mesh


def as_nodal_field(mesh: TriangularMesh, values) -> NodalField:
    """Validate values as a finite nodal field on mesh."""
    values = np.asarray(values, dtype=float)
    if values.shape != (mesh.num_nodes,):
        raise MeshError(
            f"nodal field has shape {values.shape}, mesh has {mesh.num_nodes} nodes"
        )
    if not np.all(np.isfinite(values)):
        raise MeshError("nodal field contains non-finite values")
    return values


def element_gradients(mesh: TriangularMesh, w: NodalField) -> np.ndarray:
    """Constant gradients of the P1 interpolant on all elements, shape (E, 2)."""
    return np.einsum("ek,ekd->ed", w[mesh.elements], mesh.basis_gradients)


def element_gradient(mesh: TriangularMesh, w: NodalField, e: int) -> np.ndarray:
    if not 0 <= e < mesh.num_elements:
        raise IndexError(f"element index {e} out of range")
    return w[mesh.elements[e]] @ mesh.basis_gradients[e]


def interpolate(mesh: TriangularMesh, f: Callable) -> NodalField:
    """Nodal interpolant of a vectorized scalar function f(x1, x2)."""
    values = np.broadcast_to(
        np.asarray(f(mesh.nodes[:, 0], mesh.nodes[:, 1]), dtype=float), (mesh.num_nodes,)
    ).copy()
    if not np.all(np.isfinite(values)):
        raise MeshError("interpolated function returned non-finite values")
    return values


def locate(mesh: TriangularMesh, x1, x2):
    """
    Find the element containing each point.

    Returns the element indices and the local cell coordinates (s, t) in [0, 1]^2.
    Points on shared edges are assigned to the lower-left candidate.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    s = (x1 + 1.0) / mesh.h
    t = (x2 + 1.0) / mesh.h
    i = np.clip(np.floor(s).astype(np.int64), 0, mesh.n - 1)
    j = np.clip(np.floor(t).astype(np.int64), 0, mesh.n - 1)
    s = s - i
    t = t - j
    upper = t > s
    element = 2 * (j * mesh.n + i) + upper
    return element, s, t


def evaluate(mesh: TriangularMesh, w: NodalField, x1, x2) -> np.ndarray:
    """Evaluate the P1 interpolant of w at arbitrary points of the closed square."""
    element, s, t = locate(mesh, x1, x2)
    ll, a, b = (mesh.elements[element, k] for k in range(3))
    # lower triangle: (ll, lr, ur); upper triangle: (ll, ur, ul)
    upper = element % 2 == 1
    first = np.where(upper, t, s)
    second = np.where(upper, s, t)
    return w[ll] + first * (w[np.where(upper, b, a)] - w[ll]) + second * (
        w[np.where(upper, a, b)] - w[np.where(upper, b, a)]
    )
