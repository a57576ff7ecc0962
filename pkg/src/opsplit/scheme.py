"""Operator-splitting time stepper.

Each step first advances the state with an explicit right-hand side and
implicit jump and mu*h stabilisation (one SPD solve), then restores the
constraint by a Newton solve of the coupled state/multiplier system.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from . import assembly
from .errors import (
    InvalidArgumentError,
    LinearSolverError,
    NoConvergenceError,
    NumericInputError,
    StepError,
)
from .linsolve import LINEAR_TOL, NEWTON_MAX_ITER, NEWTON_TOL, newton_solve, solve_spd
from .problems import constraint_residual, eval_f_h
from .spaces import DUNAVANT6, VERTEX, FeFunction, basis_values, build_space, interpolate


@dataclass(frozen=True)
class SchemeParams:
    T: float = 1.0
    dt_ratio: float = 0.5
    mu: float = 1.0
    linear_tol: float = LINEAR_TOL
    newton_tol: float = NEWTON_TOL
    newton_max_iter: int = NEWTON_MAX_ITER
    hessian_mode: str = "recovered"
    dt: Optional[float] = None  # absolute step; must not exceed dt_ratio * h

    def __post_init__(self):
        if not self.mu > 0:
            raise InvalidArgumentError(f"mu must be positive, got {self.mu}")
        if not self.dt_ratio > 0:
            raise InvalidArgumentError(f"dt_ratio must be positive, got {self.dt_ratio}")
        if not self.T >= 0:
            raise InvalidArgumentError(f"T must be non-negative, got {self.T}")
        if self.hessian_mode not in ("recovered", "zero"):
            raise InvalidArgumentError(f"unknown hessian_mode {self.hessian_mode!r}")

    def time_step(self, h):
        limit = self.dt_ratio * h
        if self.dt is None:
            return limit
        if self.dt > limit * (1 + 1e-12):
            raise InvalidArgumentError(f"dt={self.dt} exceeds dt_ratio*h = {limit}")
        return self.dt

    def n_steps(self, h):
        return math.ceil(self.T / self.time_step(h) - 1e-12) if self.T > 0 else 0


@dataclass(frozen=True)
class State:
    y: FeFunction
    p: tuple
    t: float
    step: int
    sup_norm: float = float("nan")
    constraint_residual: float = 0.0
    newton_iters: int = 0


class Operators:
    """Spaces, matrices and quadrature tables for one mesh."""

    def __init__(self, mesh, mu=1.0):
        self.mesh = mesh
        self.h = mesh.h
        self.mu = mu
        self.V = build_space(mesh, 2)
        self.Q = build_space(mesh, 1)
        self.M, self.M_lu = assembly.mass_solver(self.V)
        self.K = assembly.assemble_stiffness(self.V)
        self.J = assembly.assemble_edge_jump(self.V)
        self.MQ, self.MQ_lu = assembly.mass_solver(self.Q)
        self.A = (self.J + mu * self.h * self.K).tocsr()
        self.rule = DUNAVANT6
        self.x, self.w = self.V.quadrature_points(self.rule)
        self.phi = basis_values(2, self.rule.points)  # (nq, 6)
        self.psi = basis_values(1, self.rule.points)  # (nq, 3)
        self.gphi = self.V.physical_gradients(self.rule.points)  # (F, nq, 6, 2)
        self._vertex_data = None

    def with_mu(self, mu):
        if mu == self.mu:
            return self
        other = object.__new__(Operators)
        other.__dict__.update(self.__dict__)
        other.mu = mu
        other.A = (self.J + mu * self.h * self.K).tocsr()
        return other

    def fields_at_quadrature(self, y, p):
        val = np.einsum("ta,qa->tq", y.cell_coeffs(), self.phi)
        grad = np.einsum("ta,tqax->tqx", y.cell_coeffs(), self.gphi)
        mult = np.stack([pk.cell_coeffs() @ self.psi.T for pk in p], axis=-1)
        return val, grad, mult

    def vertex_data(self):
        """Lumped vertex weights and area-averaged P2 gradient operators."""
        if self._vertex_data is None:
            mesh, V = self.mesh, self.V
            area = V.areas
            w = np.zeros(mesh.n_vertices)
            rows, cols, gx, gy = [], [], [], []
            g_at_vertex = V.physical_gradients(VERTEX.points)  # (F, 3, 6, 2)
            den = np.zeros(mesh.n_vertices)
            for k in range(3):
                np.add.at(w, mesh.triangles[:, k], area / 3)
                np.add.at(den, mesh.triangles[:, k], area)
            for k in range(3):
                vk = mesh.triangles[:, k]
                scale = (area / den[vk])[:, None]
                rows.append(np.repeat(vk, 6))
                cols.append(V.cell_dofs.ravel())
                gx.append((scale * g_at_vertex[:, k, :, 0]).ravel())
                gy.append((scale * g_at_vertex[:, k, :, 1]).ravel())
            shape = (mesh.n_vertices, V.dof_count)
            r, c = np.concatenate(rows), np.concatenate(cols)
            Gx = sp.csr_matrix((np.concatenate(gx), (r, c)), shape=shape)
            Gy = sp.csr_matrix((np.concatenate(gy), (r, c)), shape=shape)
            self._vertex_data = (w, Gx, Gy)
        return self._vertex_data


def _hessian_at_quadrature(y, params, ops, prob, override):
    if override is not None:
        return override
    if params.hessian_mode == "zero" or prob.first_order:
        return np.zeros(ops.x.shape[:2] + (2, 2))
    return assembly.recover_hessian(y).at_quadrature(ops.rule)


def _dirichlet_values(prob, V, t, boundary):
    if boundary is not None:
        return np.asarray(boundary, dtype=float)
    if prob.dirichlet is None:
        return None
    return np.asarray(prob.dirichlet(V.nodes[V.boundary_dofs], t), dtype=float) * np.ones(len(V.boundary_dofs))


def _solve_with_dirichlet(A, rhs, V, yb, tol):
    if yb is None:
        return solve_spd(A, rhs, tol)
    I, Bd = V.interior_dofs, V.boundary_dofs
    out = np.empty(V.dof_count)
    out[Bd] = yb
    A = A.tocsr()
    out[I] = solve_spd(A[I][:, I], rhs[I] - A[I][:, Bd] @ yb, tol)
    return out


def dt_for(mesh, params):
    return params.time_step(mesh.h)


def pde_evolution_step(state, prob, params, ops, dt=None, hessian=None, boundary=None):
    """Intermediate state from (M/dt + J + mu h K) y~ = M/dt y^m + load(f_h + B.p^m).

    ``hessian`` overrides the recovered Hessian at quadrature points;
    ``boundary`` overrides the Dirichlet values at t_{m+1}.
    """
    dt = dt_for(ops.mesh, params) if dt is None else dt
    ops = ops.with_mu(params.mu)
    t = state.t
    Mh = _hessian_at_quadrature(state.y, params, ops, prob, hessian)
    val, grad, mult = ops.fields_at_quadrature(state.y, state.p)
    fh = eval_f_h(prob, ops.x, t, val, grad, Mh)
    Bp = np.einsum("tqk,tqk->tq", prob.B(ops.x, t, val, grad), mult)
    rhs = ops.M @ state.y.coeffs / dt + assembly.weighted_load(ops.V, fh + Bp, ops.rule)
    A = (ops.M / dt + ops.A).tocsr()
    yb = _dirichlet_values(prob, ops.V, t + dt, boundary)
    try:
        coeffs = _solve_with_dirichlet(A, rhs, ops.V, yb, params.linear_tol)
    except (LinearSolverError, NoConvergenceError) as exc:
        raise StepError(f"evolution solve failed at step {state.step + 1}: {exc}", step=state.step + 1) from exc
    return FeFunction(ops.V, coeffs)


class ConstraintSystem:
    """Residual and Jacobian of the coupled constraint-enforcement equations
    in the unknowns (free state DOFs, all multiplier DOFs)."""

    def __init__(self, prob, params, ops, y_tilde, p_old, t_new, dt, boundary=None):
        self.prob, self.ops, self.dt, self.t = prob, ops.with_mu(params.mu), dt, t_new
        V, Q = ops.V, ops.Q
        self.nV, self.nQ, self.m = V.dof_count, Q.dof_count, prob.m
        self.y_tilde = y_tilde.coeffs
        self.p_old = np.concatenate([pk.coeffs for pk in p_old]) if len(p_old) else np.zeros(prob.m * self.nQ)
        self.yb = _dirichlet_values(prob, V, t_new, boundary)
        self.free_y = V.interior_dofs if self.yb is not None else np.arange(self.nV)
        self.nodal = prob.constraint_quadrature == "nodal"
        self.Aevo = (ops.M / dt + self.ops.A).tocsr()

    # unknown vector layout: [y[free_y], p_1, ..., p_m]
    def pack(self, y, p):
        return np.concatenate([y[self.free_y], p])

    def unpack(self, u):
        y = np.empty(self.nV)
        if self.yb is not None:
            y[self.ops.V.boundary_dofs] = self.yb
        y[self.free_y] = u[: len(self.free_y)]
        return y, u[len(self.free_y):]

    def _fields(self, y, p):
        ops = self.ops
        yf = FeFunction(ops.V, y)
        pf = tuple(FeFunction(ops.Q, p[k * self.nQ:(k + 1) * self.nQ]) for k in range(self.m))
        return ops.fields_at_quadrature(yf, pf)

    def _old_mult(self):
        ops = self.ops
        return np.stack(
            [self.p_old[k * self.nQ:(k + 1) * self.nQ][ops.Q.cell_dofs] @ ops.psi.T for k in range(self.m)],
            axis=-1,
        )

    def _vertex_fields(self, y, p):
        w, Gx, Gy = self.ops.vertex_data()
        nv = self.ops.mesh.n_vertices
        q = np.column_stack([Gx @ y, Gy @ y])
        return w, y[:nv], q, p.reshape(self.m, self.nQ).T

    def _pinned(self, yv, qv, pv):
        """(V, m) mask of boundary-vertex constraint rows that the free
        unknowns cannot reach: the state there is prescribed data and g does
        not depend on its own multiplier. Those multipliers keep p^m."""
        if self.yb is None:
            return np.zeros(pv.shape, dtype=bool)
        gp = self.prob.dg_dp(self.ops.mesh.vertices, self.t, yv, qv, pv)
        own = np.diagonal(gp, axis1=-2, axis2=-1)
        return self.ops.mesh.boundary_vertices[:, None] & (own == 0)

    def state_residual(self, y, p):
        ops, prob = self.ops, self.prob
        val, grad, mult = self._fields(y, p)
        B = prob.B(ops.x, self.t, val, grad)
        coupling = np.einsum("tqk,tqk->tq", B, mult - self._old_mult())
        r = self.Aevo @ y - ops.M @ self.y_tilde / self.dt
        return r - assembly.weighted_load(ops.V, coupling, ops.rule)

    def constraint_vector(self, y, p):
        """<g, eta_i> for every P1 basis function and component, flattened
        component-major."""
        ops, prob = self.ops, self.prob
        if self.m == 0:
            return np.zeros(0)
        if self.nodal:
            w, yv, qv, pv = self._vertex_fields(y, p)
            g = constraint_residual(prob, ops.mesh.vertices, self.t, yv, qv, pv)
            pinned = self._pinned(yv, qv, pv)
            g = np.where(pinned, pv - self.p_old.reshape(self.m, -1).T, g)
            return (w[:, None] * g).T.ravel()
        val, grad, mult = self._fields(y, p)
        g = constraint_residual(prob, ops.x, self.t, val, grad, mult)
        return np.concatenate([assembly.weighted_load(ops.Q, g[..., k], ops.rule) for k in range(self.m)])

    def residual(self, u):
        y, p = self.unpack(u)
        ry = self.state_residual(y, p)[self.free_y]
        return np.concatenate([ry, self.constraint_vector(y, p)])

    def jacobian(self, u):
        ops, prob, m = self.ops, self.prob, self.m
        y, p = self.unpack(u)
        val, grad, mult = self._fields(y, p)
        x, t, w = ops.x, self.t, ops.w
        V, Q = ops.V, ops.Q
        dmult = mult - self._old_mult()
        blocks = [[None] * (m + 1) for _ in range(m + 1)]

        # state rows
        B = prob.B(x, t, val, grad)
        dBy = prob.dB_dy(x, t, val, grad)
        dBq = prob.dB_dq(x, t, val, grad)
        cy = np.einsum("tqk,tqk->tq", dBy, dmult)
        cq = np.einsum("tqkx,tqk->tqx", dBq, dmult)
        local = np.einsum("tq,tq,qa,qb->tab", w, cy, ops.phi, ops.phi)
        local += np.einsum("tq,tqx,tqbx,qa->tab", w, cq, ops.gphi, ops.phi)
        Jyy = self.Aevo - assembly.scatter(local, V.cell_dofs, V.cell_dofs, (self.nV, self.nV))
        blocks[0][0] = Jyy
        for k in range(m):
            loc = np.einsum("tq,tq,qa,qb->tab", w, B[..., k], ops.phi, ops.psi)
            blocks[0][k + 1] = -assembly.scatter(loc, V.cell_dofs, Q.cell_dofs, (self.nV, self.nQ))

        # constraint rows
        if self.nodal:
            wv, yv, qv, pv = self._vertex_fields(y, p)
            _, Gx, Gy = ops.vertex_data()
            X = ops.mesh.vertices
            gy = prob.dg_dy(X, t, yv, qv, pv)
            gq = prob.dg_dq(X, t, yv, qv, pv)
            gp = prob.dg_dp(X, t, yv, qv, pv)
            nv = ops.mesh.n_vertices
            E = sp.csr_matrix((np.ones(nv), (np.arange(nv), np.arange(nv))), shape=(nv, self.nV))
            pinned = self._pinned(yv, qv, pv)
            for k in range(m):
                keep = np.where(pinned[:, k], 0.0, wv)
                blocks[k + 1][0] = (
                    sp.diags(keep * gy[:, k]) @ E
                    + sp.diags(keep * gq[:, k, 0]) @ Gx
                    + sp.diags(keep * gq[:, k, 1]) @ Gy
                )
                for l in range(m):
                    diag = keep * gp[:, k, l] + (wv * pinned[:, k] if k == l else 0.0)
                    blocks[k + 1][l + 1] = sp.diags(diag)
        else:
            gy = prob.dg_dy(x, t, val, grad, mult)
            gq = prob.dg_dq(x, t, val, grad, mult)
            gp = prob.dg_dp(x, t, val, grad, mult)
            for k in range(m):
                loc = np.einsum("tq,tq,qa,qb->tab", w, gy[..., k], ops.psi, ops.phi)
                loc += np.einsum("tq,tqx,tqbx,qa->tab", w, gq[..., k, :], ops.gphi, ops.psi)
                blocks[k + 1][0] = assembly.scatter(loc, Q.cell_dofs, V.cell_dofs, (self.nQ, self.nV))
                for l in range(m):
                    loc = np.einsum("tq,tq,qa,qb->tab", w, gp[..., k, l], ops.psi, ops.psi)
                    blocks[k + 1][l + 1] = assembly.scatter(loc, Q.cell_dofs, Q.cell_dofs, (self.nQ, self.nQ))

        full = sp.bmat(blocks, format="csr")
        keep = np.concatenate([self.free_y, self.nV + np.arange(m * self.nQ)])
        return full[keep][:, keep]

    def weak_constraint_norm(self, y, p):
        """sup over eta in [Q_h]^m of |<g, eta>| / ||eta||, i.e. the L2 norm of
        the projected constraint."""
        r = self.constraint_vector(y, p).reshape(self.m, self.nQ)
        total = 0.0
        for rk in r:
            total += float(rk @ self.ops.MQ_lu.solve(rk))
        return math.sqrt(max(total, 0.0))


def constraint_enforcement_step(state, y_tilde, prob, params, ops, dt=None, boundary=None):
    """Newton solve of the coupled constraint step starting from (y~, p^m).

    Returns ``(y_new, p_new, report, weak_residual)``.
    """
    dt = dt_for(ops.mesh, params) if dt is None else dt
    system = ConstraintSystem(prob, params, ops, y_tilde, state.p, state.t + dt, dt, boundary)
    p_old = system.p_old
    u0 = system.pack(y_tilde.coeffs, p_old)
    try:
        u, report = newton_solve(
            system.residual,
            system.jacobian,
            u0,
            tol=params.newton_tol,
            max_iter=params.newton_max_iter,
        )
    except NoConvergenceError as exc:
        raise StepError(
            f"constraint step {state.step + 1} failed: {exc}", step=state.step + 1, report=exc.report
        ) from exc
    except LinearSolverError as exc:
        raise StepError(f"constraint step {state.step + 1}: {exc}", step=state.step + 1) from exc
    y, p = system.unpack(u)
    p_fields = tuple(FeFunction(ops.Q, p[k * system.nQ:(k + 1) * system.nQ]) for k in range(prob.m))
    return FeFunction(ops.V, y), p_fields, report, system.weak_constraint_norm(y, p)


def initial_state(prob, ops, params):
    """Interpolated y0 and a multiplier solving the constraint at t = 0."""
    y = interpolate(ops.V, lambda x, t: prob.y0(x))
    nQ = ops.Q.dof_count
    if prob.p0 is not None:
        p = np.concatenate([np.broadcast_to(prob.p0(ops.Q.nodes), (nQ,)) for _ in range(prob.m)])
    else:
        system = ConstraintSystem(prob, params, ops, y, (), 0.0, 1.0)

        def residual(pv):
            return system.constraint_vector(y.coeffs, pv)

        def jacobian(pv):
            u = system.pack(y.coeffs, pv)
            return system.jacobian(u)[len(system.free_y):, len(system.free_y):]

        p, _ = newton_solve(residual, jacobian, np.zeros(prob.m * nQ), tol=params.newton_tol, max_iter=params.newton_max_iter)
    p_fields = tuple(FeFunction(ops.Q, p[k * nQ:(k + 1) * nQ]) for k in range(prob.m))
    return State(y, p_fields, 0.0, 0, sup_norm=float(np.abs(y.coeffs).max()))


@dataclass
class Trajectory:
    states: list = field(default_factory=list)
    rows: list = field(default_factory=list)  # per-step diagnostics
    dt: float = 0.0
    h: float = 0.0

    @property
    def final(self):
        return self.states[-1]


def run(prob, mesh, params, ops=None, keep_every=1, initial=None, observer=None):
    """March ceil(T/dt) steps with dt = dt_ratio * h.

    ``keep_every`` thins the stored states (the first and last are always
    kept); every step still contributes a diagnostics row. ``initial``
    replaces the interpolated initial state.
    """
    ops = ops or Operators(mesh, params.mu)
    dt = dt_for(mesh, params)
    state = initial or initial_state(prob, ops, params)
    traj = Trajectory(states=[state], dt=dt, h=mesh.h)
    traj.rows.append(_row(state))
    n_steps = params.n_steps(mesh.h)
    for k in range(n_steps):
        try:
            y_tilde = pde_evolution_step(state, prob, params, ops, dt)
            y, p, report, weak = constraint_enforcement_step(state, y_tilde, prob, params, ops, dt)
        except StepError as exc:
            exc.trajectory = traj
            raise
        except (NumericInputError, LinearSolverError, NoConvergenceError) as exc:
            raise StepError(f"step {k + 1} failed: {exc}", step=k + 1, trajectory=traj) from exc
        state = State(
            y=y,
            p=p,
            t=(k + 1) * dt,
            step=k + 1,
            sup_norm=float(np.abs(y.coeffs).max()),
            constraint_residual=weak,
            newton_iters=report.iterations,
        )
        traj.rows.append(_row(state))
        if (k + 1) % keep_every == 0 or k + 1 == n_steps:
            traj.states.append(state)
        if observer is not None:
            observer(state)
    return traj


def _row(state):
    return {
        "step": state.step,
        "t": state.t,
        "sup_norm": state.sup_norm,
        "constraint_residual": state.constraint_residual,
        "newton_iters": state.newton_iters,
    }


# ----------------------------------------------------------------- consistency


@dataclass(frozen=True)
class SmoothField:
    """A smooth space-time function with analytic derivatives.

    ``value(x, t)``, ``dt(x, t)``, ``grad(x, t)`` (..., 2) and ``hess(x, t)``
    (..., 2, 2).
    """

    value: Callable
    dt: Callable
    grad: Callable
    hess: Callable
    name: str = "phi"


@dataclass
class DiscreteResidual:
    r1: float
    r2: float
    r3: float
    fields: dict

    @property
    def total(self):
        return max(self.r1, self.r2, self.r3)


def _riesz(ops, r):
    """Nodal representative in V_h (free DOFs only) of a weak residual."""
    I = ops.V.interior_dofs
    M = ops.M.tocsr()[I][:, I]
    return I, solve_spd(M, r[I], 1e-12)


def apply_discrete_operator(prob, phi, p_exact, mesh, params, t_m=0.0, ops=None):
    """Truncation residuals of the scheme at projected smooth data.

    Returns the sup norms of the evolution residual (minus the continuous
    operator at the nodes), the enforcement residual and the constraint
    residual.
    """
    ops = (ops or Operators(mesh, params.mu)).with_mu(params.mu)
    dt = dt_for(mesh, params)
    t1 = t_m + dt
    V, Q = ops.V, ops.Q
    P0 = assembly.l2_project(V, lambda x: phi.value(x, t_m))
    P1 = assembly.l2_project(V, lambda x: phi.value(x, t1))
    m = prob.m
    Qp0 = tuple(assembly.l2_project(Q, lambda x, k=k: p_exact(x, t_m)[..., k]) for k in range(m))
    Qp1 = tuple(assembly.l2_project(Q, lambda x, k=k: p_exact(x, t1)[..., k]) for k in range(m))
    Mreg = assembly.project_hessian(Q, lambda x: phi.hess(x, t_m)).at_quadrature(ops.rule)
    if prob.first_order or params.hessian_mode == "zero":
        Mreg = np.zeros_like(Mreg)

    # evolution residual
    val, grad, mult = ops.fields_at_quadrature(P0, Qp0)
    fh = eval_f_h(prob, ops.x, t_m, val, grad, Mreg)
    Bp = np.einsum("tqk,tqk->tq", prob.B(ops.x, t_m, val, grad), mult)
    r1 = ops.M @ (P1.coeffs - P0.coeffs) / dt + ops.A @ P1.coeffs
    r1 -= assembly.weighted_load(V, fh + Bp, ops.rule)
    I, z1 = _riesz(ops, r1)
    xn = V.nodes[I]
    S = (
        phi.dt(xn, t_m)
        - prob.f(xn, t_m, phi.value(xn, t_m), phi.grad(xn, t_m), phi.hess(xn, t_m))
        - np.einsum("nk,nk->n", prob.B(xn, t_m, phi.value(xn, t_m), phi.grad(xn, t_m)), p_exact(xn, t_m))
    )
    R1 = z1 - S

    # enforcement residual, with y~ from an actual evolution step
    start = State(P0, Qp0, t_m, 0)
    boundary = P1.coeffs[V.boundary_dofs] if prob.dirichlet is not None else None
    y_tilde = pde_evolution_step(start, prob, params, ops, dt, hessian=Mreg, boundary=boundary)
    system = ConstraintSystem(prob, params, ops, y_tilde, Qp0, t1, dt, boundary)
    p1 = np.concatenate([pk.coeffs for pk in Qp1]) if m else np.zeros(0)
    r2 = system.state_residual(P1.coeffs, p1)
    _, R2 = _riesz(ops, r2)

    # constraint residual, projected onto Q_h
    rc = system.constraint_vector(P1.coeffs, p1).reshape(m, Q.dof_count)
    R3 = np.stack([ops.MQ_lu.solve(rk) for rk in rc]) if m else np.zeros((0, Q.dof_count))

    def sup(a):
        return float(np.max(np.abs(a), initial=0.0))

    return DiscreteResidual(sup(R1), sup(R2), sup(R3), {"R1": R1, "R2": R2, "R3": R3, "nodes": xn})
