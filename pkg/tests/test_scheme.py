from dataclasses import replace

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from opsplit import assembly
from opsplit.errors import InvalidArgumentError, StepError
from opsplit.harness import affine_field, trig_field
from opsplit.mesh import build_unit_square_mesh
from opsplit.problems import get_problem, heat, hj_obstacle, reaction_diffusion
from opsplit.scheme import (
    Operators,
    SchemeParams,
    State,
    apply_discrete_operator,
    constraint_enforcement_step,
    dt_for,
    initial_state,
    pde_evolution_step,
    run,
)
from opsplit.spaces import FeFunction


def _const(c):
    return lambda x, *a: np.full(np.shape(x)[:-1], float(c))


def _zero_vec(m=1):
    return lambda x, t, y, q, *a: np.zeros(np.shape(y) + (m,))


def _plain(f_value, natural=True):
    """Trivial-constraint problem (g = p, B = 0) with constant f."""
    base = heat()
    return replace(
        base,
        name="plain",
        f=lambda x, t, y, q, M: np.full(np.shape(y), float(f_value)),
        dirichlet=None if natural else base.dirichlet,
    )


@pytest.fixture(scope="module")
def ops8(mesh8):
    return Operators(mesh8)


def _state(ops, y, p=None, t=0.0):
    y = y if isinstance(y, FeFunction) else FeFunction(ops.V, np.broadcast_to(y, (ops.V.dof_count,)).copy())
    p = p if p is not None else (FeFunction(ops.Q),)
    return State(y, p, t, 0)


def test_params_validation(mesh8):
    with pytest.raises(InvalidArgumentError):
        SchemeParams(mu=0.0)
    with pytest.raises(InvalidArgumentError):
        SchemeParams(dt_ratio=-1)
    with pytest.raises(InvalidArgumentError):
        SchemeParams(hessian_mode="exact")
    with pytest.raises(InvalidArgumentError):
        dt_for(mesh8, SchemeParams(dt=1.0))
    assert dt_for(mesh8, SchemeParams(dt=0.01)) == 0.01
    assert dt_for(mesh8, SchemeParams()) == 0.5 * mesh8.h


def test_constant_state_is_preserved(ops8):
    prob = _plain(0.0)
    yt = pde_evolution_step(_state(ops8, 5.0), prob, SchemeParams(), ops8)
    assert np.abs(yt.coeffs - 5.0).max() <= 1e-11


def test_unit_source_raises_mean_by_dt(ops8):
    prob = _plain(1.0)
    params = SchemeParams()
    yt = pde_evolution_step(_state(ops8, 0.0), prob, params, ops8)
    mean = assembly.weighted_load(ops8.V, np.ones(ops8.x.shape[:2])) @ yt.coeffs
    assert mean == pytest.approx(dt_for(ops8.mesh, params), abs=1e-10)


def test_single_step_error_first_order():
    prob = get_problem("manufactured-heat")
    hs, errs = [], []
    for n in (8, 16, 32):
        mesh = build_unit_square_mesh(n)
        ops = Operators(mesh)
        params = SchemeParams(T=1.0)
        s0 = initial_state(prob, ops, params)
        dt = dt_for(mesh, params)
        yt = pde_evolution_step(s0, prob, params, ops)
        y, _, _, _ = constraint_enforcement_step(s0, yt, prob, params, ops)
        hs.append(mesh.h)
        errs.append(np.abs(y.coeffs - prob.exact(ops.V.nodes, dt)).max())
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert slope >= 0.9


def test_dirichlet_values_imposed(ops8):
    prob = get_problem("manufactured-heat")
    params = SchemeParams()
    s0 = initial_state(prob, ops8, params)
    yt = pde_evolution_step(s0, prob, params, ops8)
    dt = dt_for(ops8.mesh, params)
    b = ops8.V.boundary_dofs
    assert np.abs(yt.coeffs[b] - prob.exact(ops8.V.nodes[b], dt)).max() <= 1e-15


def test_linear_constraint_gives_projected_multiplier(ops8):
    c = 2.0
    prob = reaction_diffusion(nu=0.01, c=c)
    params = SchemeParams()
    s0 = initial_state(prob, ops8, params)
    yt = pde_evolution_step(s0, prob, params, ops8)
    y, p, report, weak = constraint_enforcement_step(s0, yt, prob, params, ops8)
    oracle = assembly.l2_project(ops8.Q, c * y)
    assert np.abs(p[0].coeffs - oracle.coeffs).max() <= 1e-9
    assert report.converged and report.iterations <= 3
    assert weak <= params.newton_tol


def test_consistent_intermediate_is_kept(ops8):
    prob = reaction_diffusion(c=2.0, boundary="natural")
    yt = FeFunction(ops8.V, np.full(ops8.V.dof_count, 0.3))
    pm = (FeFunction(ops8.Q, np.full(ops8.Q.dof_count, 0.6)),)
    y, p, report, _ = constraint_enforcement_step(_state(ops8, 0.3, pm), yt, prob, SchemeParams(), ops8)
    assert report.iterations == 0
    assert np.abs(y.coeffs - 0.3).max() <= 1e-10
    assert np.abs(p[0].coeffs - 0.6).max() <= 1e-10


def test_inactive_obstacle_matches_unconstrained(mesh8):
    low = lambda x, t: np.full(np.shape(x)[:-1], -1.0)
    prob = hj_obstacle(obstacle=low)
    free = replace(
        prob,
        g=lambda x, t, y, q, p: np.array(p, dtype=float, copy=True),
        dg_dy=_zero_vec(),
        dg_dp=lambda x, t, y, q, p: np.ones(np.shape(y) + (1, 1)),
    )
    params = SchemeParams(T=0.3)
    a = run(prob, mesh8, params)
    b = run(free, mesh8, params)
    for sa, sb in zip(a.states, b.states):
        assert np.abs(sa.p[0].coeffs).max() == 0.0
        assert np.abs(sa.y.coeffs - sb.y.coeffs).max() <= 1e-9


def test_complementarity_holds_nodally(mesh8):
    prob = hj_obstacle()
    traj = run(prob, mesh8, SchemeParams(T=1.0))
    psi = prob.params["obstacle"](mesh8.vertices, 0.0)
    for s in traj.states[1:]:
        yv = s.y.coeffs[: mesh8.n_vertices]
        assert np.abs(np.minimum(yv - psi, s.p[0].coeffs)).max() <= 1e-10
    assert (traj.final.p[0].coeffs > 0).any()  # the obstacle is reached


def test_equality_obstacle_clamps(mesh8):
    y0 = lambda x: 0.5 * np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1])
    prob = hj_obstacle(mode="equality", obstacle=lambda x, t: y0(x))
    traj = run(prob, mesh8, SchemeParams(T=0.3))
    yv = traj.final.y.coeffs[: mesh8.n_vertices]
    assert np.abs(yv - y0(mesh8.vertices)).max() <= 1e-10


def test_short_horizon_takes_one_step(mesh8):
    params = SchemeParams(T=0.1 * mesh8.h)
    traj = run(heat(), mesh8, params)
    assert len(traj.rows) == 2 and traj.rows[-1]["step"] == 1


def test_step_count(mesh8):
    params = SchemeParams(T=1.0)
    traj = run(heat(), mesh8, params, keep_every=3)
    expected = int(np.ceil(1.0 / dt_for(mesh8, params)))
    assert traj.rows[-1]["step"] == expected
    assert traj.states[-1].step == expected
    assert [s.step for s in traj.states[:3]] == [0, 3, 6]


def test_zero_equilibrium(mesh8):
    prob = reaction_diffusion(u0=0.0)
    traj = run(prob, mesh8, SchemeParams(T=0.5))
    for s in traj.states:
        assert np.abs(s.y.coeffs).max() <= 1e-11
        assert np.abs(s.p[0].coeffs).max() <= 1e-11


def test_uniform_logistic_against_ode():
    prob = reaction_diffusion(nu=0.5, c=1.0, u0=0.25, boundary="natural")
    mesh = build_unit_square_mesh(4)
    traj = run(prob, mesh, SchemeParams(T=10.0))
    ode = solve_ivp(lambda t, u: u * (1 - 2 * u), (0, traj.final.t), [0.25], rtol=1e-12, atol=1e-14)
    limit = ode.y[0, -1]
    assert abs(limit - 0.5) <= 1e-3
    assert np.abs(traj.final.y.coeffs - limit).max() <= 0.01


def test_constraint_invariant_every_step(mesh8):
    for name in ("reaction-diffusion", "hj-obstacle", "heat"):
        traj = run(get_problem(name), mesh8, SchemeParams(T=0.5))
        assert all(r["constraint_residual"] <= 1e-10 for r in traj.rows)


def test_runs_are_bitwise_deterministic(mesh8):
    prob = reaction_diffusion()
    a = run(prob, mesh8, SchemeParams(T=0.3))
    b = run(prob, mesh8, SchemeParams(T=0.3))
    for sa, sb in zip(a.states, b.states):
        assert np.array_equal(sa.y.coeffs, sb.y.coeffs)
        assert np.array_equal(sa.p[0].coeffs, sb.p[0].coeffs)


def test_failure_carries_partial_trajectory(mesh8):
    def f(x, t, y, q, M):
        return np.where(t > 0.2, np.nan, 0.0) + 0 * y

    prob = replace(heat(), f=f)
    with pytest.raises(StepError) as info:
        run(prob, mesh8, SchemeParams(T=1.0))
    traj = info.value.trajectory
    assert traj is not None and 1 <= traj.rows[-1]["step"] < info.value.step


def test_initial_multiplier_solves_constraint(mesh8):
    params = SchemeParams()
    ops = Operators(mesh8)
    prob = reaction_diffusion(c=2.0)
    s0 = initial_state(prob, ops, params)
    oracle = assembly.l2_project(ops.Q, 2.0 * s0.y)
    assert np.abs(s0.p[0].coeffs - oracle.coeffs).max() <= 1e-10


def test_affine_test_function_is_exact(mesh8):
    prob = heat()
    res = apply_discrete_operator(prob, affine_field(), lambda x, t: np.zeros(np.shape(x)[:-1] + (1,)), mesh8, SchemeParams())
    assert res.total <= 1e-10


@pytest.fixture(scope="module")
def trig_residuals():
    prob = get_problem("manufactured-heat")
    phi = trig_field()
    p_exact = lambda x, t: phi.value(x, t)[..., None]
    return [apply_discrete_operator(prob, phi, p_exact, build_unit_square_mesh(n), SchemeParams()) for n in (16, 32, 64)]


def test_trig_residual_halves(trig_residuals):
    # 16 -> 32 is still pre-asymptotic for the jump term; 32 -> 64 is not
    _, r32, r64 = trig_residuals
    assert 1.5 <= r32.total / r64.total <= 2.5


def test_trig_residual_first_order_from_16(trig_residuals):
    r16, r32, _ = trig_residuals
    assert r16.r1 / r32.r1 >= 1.6
    assert r16.r2 / r32.r2 >= 1.6


def test_slaved_constraint_residual_vanishes(trig_residuals):
    # Pi_h(Q_h phi - P_h phi) = Q_h phi - Pi_h phi = 0 since Q_h is inside V_h
    assert all(r.r3 <= 1e-12 for r in trig_residuals)
