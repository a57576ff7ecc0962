import itertools
import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from opsplit.errors import InvalidArgumentError, NumericInputError
from opsplit.mesh import build_unit_square_mesh
from opsplit.spaces import (
    CENTROID,
    DUNAVANT6,
    STRANG3,
    VERTEX,
    FeFunction,
    basis_dlam,
    basis_values,
    build_space,
    interpolate,
)

from conftest import sinsin


def test_dof_counts():
    m1 = build_unit_square_mesh(1)
    assert build_space(m1, 1).dof_count == 4
    assert build_space(m1, 2).dof_count == m1.n_vertices + m1.n_edges == 9


def test_p1_boundary_dofs(mesh2):
    V = build_space(mesh2, 1)
    assert len(V.boundary_dofs) == 8
    assert list(V.interior_dofs) == [4]
    assert np.allclose(V.nodes[4], [0.5, 0.5])


@pytest.mark.parametrize("order", [0, 3, "2"])
def test_rejects_order(mesh2, order):
    with pytest.raises(InvalidArgumentError):
        build_space(mesh2, order)


def test_shared_edge_dofs_coincide(mesh2):
    V = build_space(mesh2, 2)
    # the same edge seen from both triangles maps to the same global DOF and node
    for e, (a, b) in enumerate(mesh2.edge_triangles):
        if b < 0:
            continue
        ka = list(mesh2.triangle_edges[a]).index(e)
        kb = list(mesh2.triangle_edges[b]).index(e)
        assert V.cell_dofs[a, 3 + ka] == V.cell_dofs[b, 3 + kb]


def test_p2_reproduces_quadratic(mesh2):
    V = build_space(mesh2, 2)
    u = interpolate(V, lambda x, t: x[:, 0] ** 2)
    rng = np.random.default_rng(1)
    for _ in range(20):
        t = int(rng.integers(mesh2.n_triangles))
        lam = rng.dirichlet(np.ones(3))
        x = lam @ mesh2.vertices[mesh2.triangles[t]]
        val, grad = u.eval(t, lam)
        assert abs(val - x[0] ** 2) <= 1e-13
        assert np.allclose(grad, [2 * x[0], 0.0], atol=1e-12)


def test_p1_constant(mesh2):
    u = interpolate(build_space(mesh2, 1), lambda x, t: 3.0)
    val, grad = u.eval(3, [0.2, 0.3, 0.5])
    assert val == pytest.approx(3.0, abs=1e-14)
    assert np.allclose(grad, 0.0, atol=1e-13)


def test_gradient_of_product_at_centre(mesh2):
    u = interpolate(build_space(mesh2, 2), lambda x, t: x[:, 0] * x[:, 1])
    # (0.5, 0.5) is vertex 0 of triangle 6 in the fixed numbering
    t = int(np.flatnonzero(np.all(np.isclose(mesh2.vertices[mesh2.triangles[:, 0]], 0.5), axis=1))[0])
    _, grad = u.eval(t, [1.0, 0.0, 0.0])
    assert np.allclose(grad, [0.5, 0.5], atol=1e-13)


def test_eval_out_of_range(mesh2):
    u = FeFunction(build_space(mesh2, 1))
    with pytest.raises(InvalidArgumentError):
        u.eval(mesh2.n_triangles, [1, 0, 0])


def test_lagrange_property(mesh2):
    V = build_space(mesh2, 2)
    u = interpolate(V, lambda x, t: np.cos(x[:, 0]) + x[:, 1] ** 3)
    assert np.allclose(u(V.nodes), u.coeffs, atol=1e-13)


def test_interpolate_zero_and_linear(mesh2):
    assert not np.any(interpolate(build_space(mesh2, 2), lambda x, t: 0.0).coeffs)
    V = build_space(mesh2, 1)
    assert np.array_equal(interpolate(V, lambda x, t: x[:, 0]).coeffs, mesh2.vertices[:, 0])


def test_interpolate_rejects_nan(mesh2):
    with pytest.raises(NumericInputError):
        interpolate(build_space(mesh2, 1), lambda x, t: np.where(x[:, 0] > 0.7, np.nan, 1.0))


def test_interpolation_error_is_third_order():
    errs = []
    for n in (8, 16):
        V = build_space(build_unit_square_mesh(n), 2)
        u = interpolate(V, sinsin)
        x, _ = V.quadrature_points(DUNAVANT6)
        val, _ = u.at_quadrature(DUNAVANT6)
        errs.append(np.abs(val - sinsin(x)).max())
    # nodal errors vanish (Lagrange property), so the sup is taken over the
    # quadrature points; P2 interpolation error is O(h^3), i.e. about 8x
    assert 6 <= errs[0] / errs[1] <= 10


@pytest.mark.parametrize("rule", [CENTROID, VERTEX, STRANG3, DUNAVANT6])
def test_quadrature_exact_to_degree(rule):
    # closed form on the reference triangle: int x^a y^b = a! b! / (a + b + 2)!
    xy = rule.points[:, 1:]
    assert rule.weights.sum() == pytest.approx(0.5, abs=1e-15)
    for a, b in itertools.product(range(rule.degree + 1), repeat=2):
        if a + b > rule.degree:
            continue
        exact = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
        approx = np.sum(rule.weights * xy[:, 0] ** a * xy[:, 1] ** b)
        assert abs(approx - exact) <= 1e-13


@pytest.mark.parametrize("order", [1, 2])
@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=3, max_size=3))
def test_partition_of_unity(order, w):
    lam = np.array(w) / sum(w)
    assert abs(basis_values(order, lam).sum() - 1.0) <= 1e-13
    m = build_unit_square_mesh(3)
    V = build_space(m, order)
    g = V.physical_gradients(lam[None, :])
    assert np.abs(g.sum(axis=2)).max() <= 1e-12


def test_basis_derivatives_match_symbolic():
    l0, l1, l2 = sp.symbols("l0 l1 l2")
    lam = [l0, l1, l2]
    p2 = [l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1), 4 * l1 * l2, 4 * l2 * l0, 4 * l0 * l1]
    pt = {l0: 0.2, l1: 0.3, l2: 0.5}
    d = basis_dlam(2, [0.2, 0.3, 0.5])
    for a, phi in enumerate(p2):
        for k in range(3):
            assert float(sp.diff(phi, lam[k]).subs(pt)) == pytest.approx(d[a, k], abs=1e-14)
