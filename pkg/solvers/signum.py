"""
Geometry and assembly tied to sign(w) and its derivative for P1 fields w.

For piecewise linear w the zero level set is one straight segment per cut
triangle. Integrals of sign(w_h) and |w_h| are computed exactly by splitting
each cut triangle into the sub-triangle around its lone vertex and the
remaining quadrilateral. The derivative of the signum map is the surface
measure

    <sign'(w) z, psi> = 2 int_{w=0} psi z / |grad w| dH^1,

assembled as a sparse matrix over P1 basis pairs.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from solvers.fem import SparseSymmetricOperator, assemble_from_local
from solvers.mesh import NodalField, TriangularMesh, element_gradients

logger = logging.getLogger(__name__)

TIE_BREAK = 1e-14
DEGENERATE_GRADIENT = 1e-12
GAUSS_POINTS = 0.5 + np.array([-0.5, 0.5]) / np.sqrt(3.0)


def tie_break(w: NodalField) -> NodalField:
    """Replace (near-)zero nodal values by a small positive value."""
    scale = np.max(np.abs(w)) if w.size else 0.0
    nudge = TIE_BREAK * scale if scale > 0 else TIE_BREAK
    return np.where(np.abs(w) <= nudge, nudge, w)


@dataclass(frozen=True)
class _CutGeometry:
    """Lone-vertex description of every cut element."""

    elements: np.ndarray
    lone: np.ndarray
    others: np.ndarray
    fractions: np.ndarray
    lone_sign: np.ndarray
    lone_value: np.ndarray


def _cut_geometry(mesh: TriangularMesh, values: np.ndarray) -> _CutGeometry:
    positive = values > 0
    count = positive.sum(axis=1)
    cut = np.flatnonzero((count == 1) | (count == 2))
    lone = np.where(count[cut] == 1, np.argmax(positive[cut], axis=1), np.argmin(positive[cut], axis=1))
    others = np.column_stack([(lone + 1) % 3, (lone + 2) % 3])
    local = values[cut]
    rows = np.arange(cut.size)
    lone_value = local[rows, lone]
    other_values = local[rows[:, None], others]
    fractions = lone_value[:, None] / (lone_value[:, None] - other_values)
    return _CutGeometry(
        elements=cut,
        lone=lone,
        others=others,
        fractions=fractions,
        lone_sign=np.sign(lone_value),
        lone_value=lone_value,
    )


def _crossing_barycentrics(geometry: _CutGeometry) -> np.ndarray:
    """Barycentric coordinates of the two edge crossings, shape (K, 2, 3)."""
    count = geometry.elements.size
    rows = np.arange(count)
    bary = np.zeros((count, 2, 3))
    for k in range(2):
        bary[rows, k, geometry.lone] = 1.0 - geometry.fractions[:, k]
        bary[rows, k, geometry.others[:, k]] = geometry.fractions[:, k]
    return bary


@dataclass(frozen=True, eq=False)
class ZeroLevelSet:
    """Segments of {w_h = 0}, one per nondegenerate cut element."""

    elements: np.ndarray = field(repr=False)
    endpoints: np.ndarray = field(repr=False)
    barycentric: np.ndarray = field(repr=False)
    lengths: np.ndarray = field(repr=False)
    gradient_norms: np.ndarray = field(repr=False)
    degenerate: np.ndarray = field(repr=False)
    boundary_cut_elements: int = 0

    @property
    def num_segments(self) -> int:
        return self.elements.size

    @property
    def total_length(self) -> float:
        return float(self.lengths.sum())

    @property
    def is_empty(self) -> bool:
        return self.elements.size == 0


def extract_zero_levelset(mesh: TriangularMesh, w: NodalField) -> ZeroLevelSet:
    """Extract the zero level set of the P1 interpolant of w."""
    values = tie_break(np.asarray(w, dtype=float))
    geometry = _cut_geometry(mesh, values[mesh.elements])
    gradient_norms = np.linalg.norm(element_gradients(mesh, values)[geometry.elements], axis=1)

    keep = gradient_norms >= DEGENERATE_GRADIENT
    degenerate = geometry.elements[~keep]
    if degenerate.size:
        logger.warning("%d cut elements with vanishing gradient skipped", degenerate.size)

    elements = geometry.elements[keep]
    bary = _crossing_barycentrics(geometry)[keep]
    endpoints = np.einsum("kpj,kjd->kpd", bary, mesh.nodes[mesh.elements[elements]])
    lengths = np.linalg.norm(endpoints[:, 1] - endpoints[:, 0], axis=1)
    return ZeroLevelSet(
        elements=elements,
        endpoints=endpoints,
        barycentric=bary,
        lengths=lengths,
        gradient_norms=gradient_norms[keep],
        degenerate=degenerate,
        boundary_cut_elements=int(mesh.boundary_elements[elements].sum()),
    )


def _lone_subtriangle(mesh: TriangularMesh, geometry: _CutGeometry):
    """Areas of the lone-vertex sub-triangles and their vertex barycentric sums."""
    areas = mesh.element_area[geometry.elements] * geometry.fractions.prod(axis=1)
    bary = _crossing_barycentrics(geometry)
    vertex_sum = bary.sum(axis=1)
    vertex_sum[np.arange(geometry.elements.size), geometry.lone] += 1.0
    return areas, vertex_sum


def integrate_sign(mesh: TriangularMesh, w: NodalField) -> np.ndarray:
    """Exact load vector b_i = int sign(w_h) phi_i."""
    values = tie_break(np.asarray(w, dtype=float))[mesh.elements]
    element_sign = np.where(values[:, 0] > 0, 1.0, -1.0)
    local = np.repeat((element_sign * mesh.element_area / 3.0)[:, None], 3, axis=1)

    geometry = _cut_geometry(mesh, values)
    if geometry.elements.size:
        cut = geometry.elements
        sub_area, vertex_sum = _lone_subtriangle(mesh, geometry)
        # sign is -s on the whole triangle plus 2 s on the lone sub-triangle
        sigma = geometry.lone_sign[:, None]
        local[cut] = -sigma * (mesh.element_area[cut] / 3.0)[:, None] + 2.0 * sigma * (
            sub_area / 3.0
        )[:, None] * vertex_sum
    return np.bincount(mesh.elements.ravel(), weights=local.ravel(), minlength=mesh.num_nodes)


def l1_norm(mesh: TriangularMesh, w: NodalField) -> float:
    """Exact int |w_h|."""
    values = tie_break(np.asarray(w, dtype=float))[mesh.elements]
    integrals = np.abs(mesh.element_area * values.mean(axis=1))

    geometry = _cut_geometry(mesh, values)
    if geometry.elements.size:
        cut = geometry.elements
        sigma = geometry.lone_sign
        sub_area = mesh.element_area[cut] * geometry.fractions.prod(axis=1)
        integrals[cut] = -sigma * mesh.element_area[cut] * values[cut].mean(axis=1) + 2.0 * sigma * (
            sub_area * geometry.lone_value / 3.0
        )
    return float(integrals.sum())


def split_areas(mesh: TriangularMesh, w: NodalField):
    """Exact areas of {w_h > 0} and {w_h < 0}."""
    values = tie_break(np.asarray(w, dtype=float))[mesh.elements]
    positive = np.where(values[:, 0] > 0, mesh.element_area, 0.0)

    geometry = _cut_geometry(mesh, values)
    if geometry.elements.size:
        cut = geometry.elements
        sub_area = mesh.element_area[cut] * geometry.fractions.prod(axis=1)
        positive[cut] = np.where(geometry.lone_sign > 0, sub_area, mesh.element_area[cut] - sub_area)
    area_positive = float(positive.sum())
    return area_positive, float(mesh.element_area.sum()) - area_positive


def cut_element_area(mesh: TriangularMesh, w: NodalField) -> float:
    """Total area of the elements crossed by the zero level set."""
    values = tie_break(np.asarray(w, dtype=float))[mesh.elements]
    return float(mesh.element_area[_cut_geometry(mesh, values).elements].sum())


class SignDerivativeMatrix:
    """D(w)_ij = 2 int_{w=0} phi_i phi_j / |grad w| dH^1 with its level set."""

    def __init__(self, operator: SparseSymmetricOperator, level_set: ZeroLevelSet):
        self.operator = operator
        self.level_set = level_set

    @property
    def matrix(self):
        return self.operator.matrix

    @property
    def degenerate(self) -> np.ndarray:
        return self.level_set.degenerate

    def __matmul__(self, vector):
        return self.operator @ vector

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        """The semi-definite bilinear form a^T D b."""
        return float(a @ (self.operator @ b))

    def seminorm(self, v: np.ndarray) -> float:
        return float(np.sqrt(max(self.inner(v, v), 0.0)))


def assemble_sign_derivative(mesh: TriangularMesh, w: NodalField) -> SignDerivativeMatrix:
    """Assemble D(w) with 2-point Gauss quadrature on every level-set segment."""
    level_set = extract_zero_levelset(mesh, w)
    local = np.zeros((level_set.num_segments, 3, 3))
    for point in GAUSS_POINTS:
        beta = (1.0 - point) * level_set.barycentric[:, 0] + point * level_set.barycentric[:, 1]
        local += (0.5 * level_set.lengths)[:, None, None] * np.einsum("ki,kj->kij", beta, beta)
    local *= (2.0 / level_set.gradient_norms)[:, None, None]
    operator = assemble_from_local(mesh, local, elements=mesh.elements[level_set.elements])
    return SignDerivativeMatrix(operator, level_set)


def sign_difference_quotient(
    mesh: TriangularMesh, w: NodalField, z: NodalField, psi: NodalField, t: float
) -> float:
    """Exact value of int (sign(w + t z) - sign(w)) psi / t for P1 fields."""
    difference = integrate_sign(mesh, w + t * z) - integrate_sign(mesh, w)
    return float(psi @ difference) / t


def subdivide_by_sign(mesh: TriangularMesh, w: NodalField):
    """
    Split every cut element along its zero segment.

    Returns (points, triangles, signs). The two crossing points of every cut
    element are appended after the mesh nodes; sign(w_h) is constant on each
    returned triangle and all triangles keep the counterclockwise orientation.
    """
    values = tie_break(np.asarray(w, dtype=float))
    local = values[mesh.elements]
    element_sign = np.where(local[:, 0] > 0, 1.0, -1.0)
    geometry = _cut_geometry(mesh, local)
    cut = geometry.elements
    uncut = np.setdiff1d(np.arange(mesh.num_elements), cut)

    rows = np.arange(cut.size)
    vertices = mesh.elements[cut]
    lone = vertices[rows, geometry.lone]
    first = vertices[rows, geometry.others[:, 0]]
    second = vertices[rows, geometry.others[:, 1]]
    crossings = np.einsum("kpj,kjd->kpd", _crossing_barycentrics(geometry), mesh.nodes[vertices])
    crossing_ids = mesh.num_nodes + np.arange(2 * cut.size).reshape(-1, 2)
    p1, p2 = crossing_ids[:, 0], crossing_ids[:, 1]

    triangles = np.vstack(
        [
            mesh.elements[uncut],
            np.column_stack([lone, p1, p2]),
            np.column_stack([p1, first, second]),
            np.column_stack([p1, second, p2]),
        ]
    )
    signs = np.concatenate(
        [element_sign[uncut], geometry.lone_sign, -geometry.lone_sign, -geometry.lone_sign]
    )
    points = np.vstack([mesh.nodes, crossings.reshape(-1, 2)])
    return points, triangles, signs
