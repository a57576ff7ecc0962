"""Continuous P1/P2 Lagrange spaces on triangle meshes.

Basis functions are written in barycentric coordinates. Local P2 numbering is
the three vertices followed by the midpoints of the local edges opposite
vertex 0, 1, 2.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import InvalidArgumentError, NumericInputError
from .mesh import LOCAL_EDGES


@dataclass(frozen=True)
class QuadratureRule:
    """Rule on the reference triangle; ``weights`` sum to 1/2."""

    points: np.ndarray  # (nq, 3) barycentric
    weights: np.ndarray  # (nq,)
    degree: int


def _perm3(a, b, c):
    return [[a, b, c], [b, c, a], [c, a, b]]


_A1, _W1 = 0.44594849091596488632, 0.22338158967801146570
_A2, _W2 = 0.09157621350977074346, 0.10995174365532186764

CENTROID = QuadratureRule(np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([0.5]), 1)
VERTEX = QuadratureRule(np.eye(3), np.full(3, 1 / 6), 1)
STRANG3 = QuadratureRule(
    np.array(_perm3(2 / 3, 1 / 6, 1 / 6)), np.full(3, 1 / 6), 2
)
DUNAVANT6 = QuadratureRule(
    np.array(_perm3(1 - 2 * _A1, _A1, _A1) + _perm3(1 - 2 * _A2, _A2, _A2)),
    0.5 * np.array([_W1] * 3 + [_W2] * 3),
    4,
)

# two-point Gauss on the unit interval
_g = 0.5 / np.sqrt(3.0)
EDGE_GAUSS_POINTS = np.array([0.5 - _g, 0.5 + _g])
EDGE_GAUSS_WEIGHTS = np.array([0.5, 0.5])


def basis_values(order, lam):
    """Basis values at barycentric points ``lam`` (..., 3) -> (..., nloc)."""
    lam = np.asarray(lam, dtype=float)
    if order == 1:
        return lam.copy()
    l0, l1, l2 = lam[..., 0], lam[..., 1], lam[..., 2]
    return np.stack(
        [
            l0 * (2 * l0 - 1),
            l1 * (2 * l1 - 1),
            l2 * (2 * l2 - 1),
            4 * l1 * l2,
            4 * l2 * l0,
            4 * l0 * l1,
        ],
        axis=-1,
    )


def basis_dlam(order, lam):
    """Derivatives with respect to the barycentrics, shape (..., nloc, 3)."""
    lam = np.asarray(lam, dtype=float)
    shape = lam.shape[:-1]
    if order == 1:
        return np.broadcast_to(np.eye(3), shape + (3, 3)).copy()
    out = np.zeros(shape + (6, 3))
    for k in range(3):
        out[..., k, k] = 4 * lam[..., k] - 1
    for k, (i, j) in enumerate(LOCAL_EDGES):
        out[..., 3 + k, i] = 4 * lam[..., j]
        out[..., 3 + k, j] = 4 * lam[..., i]
    return out


class FeSpace:
    """Scalar continuous Lagrange space of order 1 or 2.

    Global numbering: vertex DOFs first (vertex index), then one DOF per edge
    (``V + edge index``) for order 2.
    """

    def __init__(self, mesh, order):
        if order not in (1, 2):
            raise InvalidArgumentError(f"order must be 1 or 2, got {order!r}")
        self.mesh = mesh
        self.order = order
        nv = mesh.n_vertices
        if order == 1:
            self.cell_dofs = mesh.triangles.copy()
            self.dof_count = nv
            self.nodes = mesh.vertices.copy()
            on_boundary = mesh.boundary_vertices.copy()
        else:
            self.cell_dofs = np.hstack([mesh.triangles, nv + mesh.triangle_edges])
            self.dof_count = nv + mesh.n_edges
            self.nodes = np.vstack([mesh.vertices, mesh.edge_midpoints])
            on_boundary = np.concatenate([mesh.boundary_vertices, mesh.boundary_edges])
        self.boundary_mask = on_boundary
        self.boundary_dofs = np.flatnonzero(on_boundary)
        self.interior_dofs = np.flatnonzero(~on_boundary)

    @property
    def n_local(self):
        return 3 if self.order == 1 else 6

    @cached_property
    def areas(self):
        return self.mesh.areas

    @cached_property
    def lambda_gradients(self):
        """Gradients of the barycentric coordinates, (F, 3, 2)."""
        p = self.mesh.vertices[self.mesh.triangles]
        J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # columns
        Jinv = np.linalg.inv(J)  # rows are grad(lambda_1), grad(lambda_2)
        G = np.empty((len(p), 3, 2))
        G[:, 1] = Jinv[:, 0]
        G[:, 2] = Jinv[:, 1]
        G[:, 0] = -G[:, 1] - G[:, 2]
        return G

    def physical_gradients(self, lam, cells=None):
        """Basis gradients. ``lam`` is (nq, 3) shared by all cells or
        (ncells, nq, 3) per cell; result is (ncells, nq, nloc, 2)."""
        G = self.lambda_gradients if cells is None else self.lambda_gradients[cells]
        d = basis_dlam(self.order, lam)
        if d.ndim == 3:
            return np.einsum("qak,tkx->tqax", d, G)
        return np.einsum("tqak,tkx->tqax", d, G)

    def quadrature_points(self, rule):
        """Physical quadrature points (F, nq, 2) and weights (F, nq)."""
        p = self.mesh.vertices[self.mesh.triangles]
        x = np.einsum("qk,tkx->tqx", rule.points, p)
        w = 2.0 * self.areas[:, None] * rule.weights[None, :]
        return x, w

    def locate(self, triangle):
        if not 0 <= triangle < self.mesh.n_triangles:
            raise InvalidArgumentError(
                f"triangle index {triangle} out of range [0, {self.mesh.n_triangles})"
            )


def build_space(mesh, order):
    return FeSpace(mesh, order)


class FeFunction:
    """Coefficient vector attached to a space."""

    def __init__(self, space, coeffs=None):
        self.space = space
        if coeffs is None:
            coeffs = np.zeros(space.dof_count)
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (space.dof_count,):
            raise InvalidArgumentError(
                f"expected {space.dof_count} coefficients, got shape {coeffs.shape}"
            )
        self.coeffs = coeffs

    def copy(self):
        return FeFunction(self.space, self.coeffs.copy())

    def __add__(self, other):
        return FeFunction(self.space, self.coeffs + other.coeffs)

    def __sub__(self, other):
        return FeFunction(self.space, self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return FeFunction(self.space, scalar * self.coeffs)

    __rmul__ = __mul__

    def cell_coeffs(self):
        return self.coeffs[self.space.cell_dofs]

    def at_quadrature(self, rule):
        """Values (F, nq) and gradients (F, nq, 2) at the rule's points."""
        sp = self.space
        c = self.cell_coeffs()
        phi = basis_values(sp.order, rule.points)
        values = c @ phi.T
        grads = np.einsum("ta,tqax->tqx", c, sp.physical_gradients(rule.points))
        return values, grads

    def eval(self, triangle, lam):
        """Value and gradient inside ``triangle`` at barycentric point ``lam``."""
        self.space.locate(triangle)
        lam = np.asarray(lam, dtype=float)
        c = self.cell_coeffs()[triangle]
        value = basis_values(self.space.order, lam) @ c
        d = basis_dlam(self.space.order, lam)  # (nloc, 3)
        grad = c @ d @ self.space.lambda_gradients[triangle]
        return float(value), grad

    def __call__(self, x):
        """Evaluate at physical points ``x`` (N, 2) by brute-force location."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        sp = self.space
        p = sp.mesh.vertices[sp.mesh.triangles]
        G = sp.lambda_gradients
        out = np.full(len(x), np.nan)
        for i, xi in enumerate(x):
            lam12 = np.einsum("tkx,tx->tk", G[:, 1:], xi - p[:, 0])
            lam = np.column_stack([1 - lam12.sum(axis=1), lam12])
            t = int(np.argmax(lam.min(axis=1)))
            out[i] = basis_values(sp.order, lam[t]) @ self.cell_coeffs()[t]
        return out


def interpolate(space, g, t=0.0):
    """Lagrange interpolant of ``g(x, t)``; ``g`` is vectorised over x (N, 2)."""
    values = np.asarray(g(space.nodes, t), dtype=float)
    values = np.broadcast_to(values, (space.dof_count,)).copy()
    bad = ~np.isfinite(values)
    if bad.any():
        node = int(np.flatnonzero(bad)[0])
        raise NumericInputError(
            f"interpolated function is not finite at node {node} ({space.nodes[node]})"
        )
    return FeFunction(space, values)
