"""Independent symbolic reference implementations used by the tests."""

from fractions import Fraction
from math import factorial

import numpy as np
import sympy as sp

X, Y = sp.symbols("x y")
LOCAL_EDGES = [(1, 2), (2, 0), (0, 1)]


def barycentrics(p):
    """Affine barycentric coordinates of the triangle ``p`` as sympy
    expressions in (x, y)."""
    P = [[sp.Rational(Fraction(float(c)).limit_denominator(10**6)) for c in v] for v in p]
    A = sp.Matrix([[1, 1, 1], [P[0][0], P[1][0], P[2][0]], [P[0][1], P[1][1], P[2][1]]])
    lam = A.inv() * sp.Matrix([1, X, Y])
    return [sp.expand(l) for l in lam], P


def basis(order, p):
    lam, P = barycentrics(p)
    if order == 1:
        return lam, P
    out = [sp.expand(l * (2 * l - 1)) for l in lam]
    out += [sp.expand(4 * lam[i] * lam[j]) for i, j in LOCAL_EDGES]
    return out, P


def integrate_triangle(expr, P):
    """Exact integral of a polynomial over the triangle with vertices P."""
    s, t = sp.symbols("s t")
    x = P[0][0] + (P[1][0] - P[0][0]) * s + (P[2][0] - P[0][0]) * t
    y = P[0][1] + (P[1][1] - P[0][1]) * s + (P[2][1] - P[0][1]) * t
    jac = abs((P[1][0] - P[0][0]) * (P[2][1] - P[0][1]) - (P[2][0] - P[0][0]) * (P[1][1] - P[0][1]))
    poly = sp.Poly(sp.expand(expr.subs({X: x, Y: y}, simultaneous=True)), s, t)
    total = sp.Integer(0)
    for (a, b), c in poly.terms():
        total += c * sp.Rational(factorial(a) * factorial(b), factorial(a + b + 2))
    return total * jac


def local_matrices(order, p):
    phi, P = basis(order, p)
    n = len(phi)
    M = np.zeros((n, n))
    K = np.zeros((n, n))
    grads = [(sp.diff(f, X), sp.diff(f, Y)) for f in phi]
    for i in range(n):
        for j in range(n):
            M[i, j] = float(integrate_triangle(phi[i] * phi[j], P))
            K[i, j] = float(integrate_triangle(grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1], P))
    return M, K


def dense_assemble(space, which):
    n = space.dof_count
    A = np.zeros((n, n))
    for t, tri in enumerate(space.mesh.triangles):
        M, K = local_matrices(space.order, space.mesh.vertices[tri])
        loc = M if which == "mass" else K
        d = space.cell_dofs[t]
        A[np.ix_(d, d)] += loc
    return A


def dense_edge_jump(space, h):
    """sum_e h^2 int_e [grad u].[grad v] from symbolic basis gradients."""
    mesh = space.mesh
    n = space.dof_count
    A = np.zeros((n, n))
    s = sp.symbols("s")
    for e, (a, b) in enumerate(mesh.edge_triangles):
        if b < 0:
            continue
        v0, v1 = mesh.vertices[mesh.edges[e]]
        length = float(np.hypot(*(v1 - v0)))
        x = sp.Rational(Fraction(float(v0[0])).limit_denominator(10**6)) + s * sp.Rational(
            Fraction(float(v1[0] - v0[0])).limit_denominator(10**6)
        )
        y = sp.Rational(Fraction(float(v0[1])).limit_denominator(10**6)) + s * sp.Rational(
            Fraction(float(v1[1] - v0[1])).limit_denominator(10**6)
        )
        jumps = {}
        for sign, t in ((1, a), (-1, b)):
            phi, _ = basis(space.order, mesh.vertices[mesh.triangles[t]])
            for k, f in enumerate(phi):
                g = [sign * sp.diff(f, X), sign * sp.diff(f, Y)]
                dof = int(space.cell_dofs[t, k])
                old = jumps.get(dof, [0, 0])
                jumps[dof] = [old[0] + g[0], old[1] + g[1]]
        dofs = list(jumps)
        for i in dofs:
            for j in dofs:
                expr = (jumps[i][0] * jumps[j][0] + jumps[i][1] * jumps[j][1]).subs({X: x, Y: y}, simultaneous=True)
                A[i, j] += h**2 * length * float(sp.integrate(sp.expand(expr), (s, 0, 1)))
    return A
