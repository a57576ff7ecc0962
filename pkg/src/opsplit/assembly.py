"""Global matrices, load vectors, L2 projections and Hessian recovery.

All assembly is vectorised over cells (or interior edges) and accumulated in a
fixed order, so results are bitwise reproducible.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import NumericInputError
from .linsolve import check_residual, factorize
from .mesh import interior_edges
from .spaces import (
    DUNAVANT6,
    EDGE_GAUSS_POINTS,
    EDGE_GAUSS_WEIGHTS,
    FeFunction,
    basis_values,
)

DROP_BELOW = 1e-300


def finalize(A):
    A = A.tocsr()
    A.sum_duplicates()
    A.data[np.abs(A.data) < DROP_BELOW] = 0.0
    A.eliminate_zeros()
    A.sort_indices()
    return A


def scatter(local, row_dofs, col_dofs, shape):
    """Sum local blocks ``local[c]`` (a, b) into a sparse matrix."""
    nr, nc = row_dofs.shape[1], col_dofs.shape[1]
    rows = np.broadcast_to(row_dofs[:, :, None], (len(local), nr, nc)).ravel()
    cols = np.broadcast_to(col_dofs[:, None, :], (len(local), nr, nc)).ravel()
    return finalize(sp.coo_matrix((local.ravel(), (rows, cols)), shape=shape))


def local_mass(test_space, trial_space=None, rule=DUNAVANT6):
    trial_space = trial_space or test_space
    _, w = test_space.quadrature_points(rule)
    phi = basis_values(test_space.order, rule.points)
    psi = basis_values(trial_space.order, rule.points)
    return np.einsum("tq,qa,qb->tab", w, phi, psi)


def assemble_mass(space, rule=DUNAVANT6):
    """Consistent mass matrix (phi_j, phi_i)."""
    n = space.dof_count
    return scatter(local_mass(space, rule=rule), space.cell_dofs, space.cell_dofs, (n, n))


def assemble_mixed_mass(test_space, trial_space, rule=DUNAVANT6):
    """Rectangular matrix (psi_j, phi_i) with rows in ``test_space``."""
    shape = (test_space.dof_count, trial_space.dof_count)
    return scatter(
        local_mass(test_space, trial_space, rule),
        test_space.cell_dofs,
        trial_space.cell_dofs,
        shape,
    )


def local_stiffness(space, rule=DUNAVANT6):
    _, w = space.quadrature_points(rule)
    g = space.physical_gradients(rule.points)
    return np.einsum("tq,tqax,tqbx->tab", w, g, g)


def assemble_stiffness(space, rule=DUNAVANT6):
    """Stiffness matrix (grad phi_j, grad phi_i); the mu*h factor is applied by the caller."""
    n = space.dof_count
    return scatter(local_stiffness(space, rule), space.cell_dofs, space.cell_dofs, (n, n))


def edge_quadrature(space):
    """Per interior edge: dofs of both neighbours (ne, 2*nloc), signed basis
    gradients (ne, nq, 2*nloc, 2) whose contraction gives the gradient jump,
    and line weights (ne, nq)."""
    mesh = space.mesh
    idx, left, right, _ = interior_edges(mesh)
    ends = mesh.vertices[mesh.edges[idx]]  # (ne, 2, 2)
    s = EDGE_GAUSS_POINTS
    x = ends[:, None, 0] + s[None, :, None] * (ends[:, None, 1] - ends[:, None, 0])
    length = mesh.edge_lengths[idx]
    w = length[:, None] * EDGE_GAUSS_WEIGHTS[None, :]

    def grads(cells):
        p0 = mesh.vertices[mesh.triangles[cells, 0]]
        G = space.lambda_gradients[cells]
        lam12 = np.einsum("tkx,tqx->tqk", G[:, 1:], x - p0[:, None, :])
        lam = np.concatenate([1 - lam12.sum(axis=2, keepdims=True), lam12], axis=2)
        return space.physical_gradients(lam, cells)

    g = np.concatenate([grads(left), -grads(right)], axis=2)
    dofs = np.hstack([space.cell_dofs[left], space.cell_dofs[right]])
    return dofs, g, w


def local_edge_jump(space, h=None):
    h = space.mesh.h if h is None else h
    dofs, g, w = edge_quadrature(space)
    return dofs, h**2 * np.einsum("eq,eqax,eqbx->eab", w, g, g)


def assemble_edge_jump(space, h=None):
    """Gradient-jump form sum_e h^2 int_e [grad u].[grad v] ds over interior edges."""
    n = space.dof_count
    dofs, local = local_edge_jump(space, h)
    if len(local) == 0:
        return sp.csr_matrix((n, n))
    return scatter(local, dofs, dofs, (n, n))


def jump_energy(u, h=None):
    """a_h(u, u) summed edge by edge from the squared jumps, which avoids the
    cancellation in u.J.u for nearly continuous gradients."""
    space = u.space
    h = space.mesh.h if h is None else h
    dofs, g, w = edge_quadrature(space)
    jump = np.einsum("eqax,ea->eqx", g, u.coeffs[dofs])
    return float(h**2 * np.sum(w * np.sum(jump**2, axis=-1)))


def weighted_load(space, values, rule=DUNAVANT6):
    """Vector sum_K sum_q w_q values[K, q] phi_i(x_q) for quadrature values (F, nq)."""
    values = np.asarray(values, dtype=float)
    bad = ~np.isfinite(values)
    if bad.any():
        cell = int(np.flatnonzero(bad.any(axis=tuple(range(1, values.ndim))))[0])
        raise NumericInputError(f"load integrand is not finite on triangle {cell}", cell)
    _, w = space.quadrature_points(rule)
    phi = basis_values(space.order, rule.points)
    local = np.einsum("tq,tq,qa->ta", w, values, phi)
    out = np.zeros(space.dof_count)
    np.add.at(out, space.cell_dofs.ravel(), local.ravel())
    return out


def assemble_load(space, integrand, y=None, p=(), hessian=None, rule=DUNAVANT6):
    """Load vector of a pointwise integrand.

    ``integrand(x, value, grad, hess, mult)`` is called once with arrays over
    all quadrature points: x (F, nq, 2), value (F, nq), grad (F, nq, 2),
    hess (F, nq, 2, 2) and mult (F, nq, m). ``y`` and ``p`` supply the field
    arguments (zeros when omitted) and ``hessian`` a precomputed (F, nq, 2, 2)
    array.
    """
    x, _ = space.quadrature_points(rule)
    F, nq = x.shape[:2]
    if y is None:
        value, grad = np.zeros((F, nq)), np.zeros((F, nq, 2))
    else:
        value, grad = y.at_quadrature(rule)
    hess = np.zeros((F, nq, 2, 2)) if hessian is None else hessian
    mult = np.stack([pk.at_quadrature(rule)[0] for pk in p], axis=-1) if len(p) else np.zeros((F, nq, 0))
    vals = np.broadcast_to(integrand(x, value, grad, hess, mult), (F, nq))
    return weighted_load(space, vals, rule)


def mass_solver(space):
    """Cached sparse LU of the mass matrix of ``space``."""
    cache = space.__dict__.setdefault("_cache", {})
    if "mass_lu" not in cache:
        cache["mass"] = assemble_mass(space)
        cache["mass_lu"] = factorize(cache["mass"])
    return cache["mass"], cache["mass_lu"]


def _values_at_quadrature(space, g, rule):
    x, _ = space.quadrature_points(rule)
    if isinstance(g, FeFunction):
        if g.space.mesh is not space.mesh:
            raise ValueError("projected FeFunction must live on the same mesh")
        return g.at_quadrature(rule)[0]
    if callable(g):
        return np.broadcast_to(np.asarray(g(x), dtype=float), x.shape[:2])
    return np.asarray(g, dtype=float)


def l2_project(space, g, rule=DUNAVANT6):
    """L2 projection of ``g`` onto ``space``.

    ``g`` is a callable of physical points (..., 2), an FeFunction on the same
    mesh, or an array of values at the rule's quadrature points.
    """
    M, lu = mass_solver(space)
    b = weighted_load(space, _values_at_quadrature(space, g, rule), rule)
    c = lu.solve(b)
    check_residual(M, c, b, 1e-12)
    return FeFunction(space, c)


@dataclass
class HessianField:
    """Piecewise Hessian data: constant per cell and averaged per vertex."""

    cell: np.ndarray | None  # (F, 2, 2)
    vertex: np.ndarray  # (V, 2, 2)
    mesh: object

    def at_quadrature(self, rule=DUNAVANT6):
        """Linear interpolation of the vertex matrices, (F, nq, 2, 2)."""
        vals = self.vertex[self.mesh.triangles]  # (F, 3, 2, 2)
        return np.einsum("qk,tkij->tqij", rule.points, vals)

    def __add__(self, other):
        cell = None if self.cell is None or other.cell is None else self.cell + other.cell
        return HessianField(cell, self.vertex + other.vertex, self.mesh)

    def __mul__(self, s):
        return HessianField(None if self.cell is None else s * self.cell, s * self.vertex, self.mesh)

    __rmul__ = __mul__


_P2_D2 = np.zeros((6, 3, 3))
for _k in range(3):
    _P2_D2[_k, _k, _k] = 4.0
for _k, (_i, _j) in enumerate([(1, 2), (2, 0), (0, 1)]):
    _P2_D2[3 + _k, _i, _j] = _P2_D2[3 + _k, _j, _i] = 4.0


def recover_hessian(y):
    """Elementwise Hessian of a P2 field, averaged over vertex patches with
    area weights."""
    space = y.space
    if space.order != 2:
        raise ValueError("Hessian recovery needs a P2 field")
    G = space.lambda_gradients
    d2 = np.einsum("ta,akl->tkl", y.cell_coeffs(), _P2_D2)
    cell = np.einsum("tkl,tki,tlj->tij", d2, G, G)
    cell = 0.5 * (cell + cell.transpose(0, 2, 1))
    mesh = space.mesh
    area = space.areas
    num = np.zeros((mesh.n_vertices, 2, 2))
    den = np.zeros(mesh.n_vertices)
    for k in range(3):
        np.add.at(num, mesh.triangles[:, k], area[:, None, None] * cell)
        np.add.at(den, mesh.triangles[:, k], area)
    return HessianField(cell, num / den[:, None, None], mesh)


def project_hessian(p1_space, hess, rule=DUNAVANT6):
    """Componentwise L2 projection onto P1 of an analytic Hessian ``hess(x)``
    returning (..., 2, 2)."""
    x, _ = p1_space.quadrature_points(rule)
    H = np.asarray(hess(x), dtype=float)
    vertex = np.empty((p1_space.dof_count, 2, 2))
    for i in range(2):
        for j in range(2):
            vertex[:, i, j] = l2_project(p1_space, H[..., i, j], rule).coeffs
    return HessianField(None, vertex, p1_space.mesh)
