"""Constrained evolution problems and builtin instances.

Every callback is vectorised: ``x`` is (..., 2), ``y`` (...), ``q`` (..., 2),
``M`` (..., 2, 2) and ``p`` (..., m). ``f`` returns (...), ``B`` and ``g``
return (..., m).
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InvalidArgumentError, NumericInputError


@dataclass(frozen=True)
class ProblemSpec:
    """dy/dt = f(x, t, y, grad y, hess y) + B(x, t, y, grad y) . p,
    g(x, t, y, grad y, p) = 0, with Dirichlet data (or natural boundary when
    ``dirichlet`` is None)."""

    name: str
    m: int
    f: Callable
    B: Callable
    g: Callable
    y0: Callable
    dirichlet: Optional[Callable] = None
    df_dy: Optional[Callable] = None
    df_dq: Optional[Callable] = None
    dB_dy: Optional[Callable] = None
    dB_dq: Optional[Callable] = None
    dg_dy: Optional[Callable] = None
    dg_dq: Optional[Callable] = None
    dg_dp: Optional[Callable] = None
    exact: Optional[Callable] = None
    exact_multiplier: Optional[Callable] = None
    p0: Optional[Callable] = None
    C_f: Optional[float] = None
    C_g: Optional[float] = None
    monotone: bool = False
    first_order: bool = False
    # "gauss": <g, eta> by volume quadrature; "nodal": vertex (lumped) quadrature
    constraint_quadrature: str = "gauss"
    params: dict = field(default_factory=dict)


def _finite(value, what):
    value = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(value)):
        raise NumericInputError(f"{what} returned a non-finite value")
    return value


def eval_f_h(prob, x, t, y, q, M_recovered):
    """f with the recovered (or projected) Hessian in place of the exact one."""
    if prob.first_order:
        M_recovered = np.zeros_like(np.asarray(M_recovered, dtype=float))
    return _finite(prob.f(x, t, y, q, M_recovered), f"{prob.name}.f")


def constraint_residual(prob, x, t, y, q, p):
    return _finite(prob.g(x, t, y, q, p), f"{prob.name}.g")


# ---------------------------------------------------------------- partials


def _fd(fun, x0, h):
    return (fun(x0 + h) - fun(x0 - h)) / (2 * h)


def finite_difference_partials(prob, x, t, y, q, M, p, rel_step=1e-7):
    """Central differences of f, B, g with respect to y, q and p at one state."""
    hy = rel_step * max(1.0, abs(y))
    out = {
        "df_dy": _fd(lambda s: prob.f(x, t, s, q, M), y, hy),
        "dB_dy": _fd(lambda s: prob.B(x, t, s, q), y, hy),
        "dg_dy": _fd(lambda s: prob.g(x, t, s, q, p), y, hy),
    }
    dfq, dBq, dgq, dgp = [], [], [], []
    for i in range(2):
        e = np.zeros(2)
        e[i] = rel_step * max(1.0, abs(q[i]))
        dfq.append((prob.f(x, t, y, q + e, M) - prob.f(x, t, y, q - e, M)) / (2 * e[i]))
        dBq.append((prob.B(x, t, y, q + e) - prob.B(x, t, y, q - e)) / (2 * e[i]))
        dgq.append((prob.g(x, t, y, q + e, p) - prob.g(x, t, y, q - e, p)) / (2 * e[i]))
    for j in range(prob.m):
        e = np.zeros(prob.m)
        e[j] = rel_step * max(1.0, abs(p[j]))
        dgp.append((prob.g(x, t, y, q, p + e) - prob.g(x, t, y, q, p - e)) / (2 * e[j]))
    out["df_dq"] = np.array(dfq)
    out["dB_dq"] = np.stack(dBq, axis=-1)
    out["dg_dq"] = np.stack(dgq, axis=-1)
    out["dg_dp"] = np.stack(dgp, axis=-1)
    return out


def analytic_partials(prob, x, t, y, q, M, p):
    out = {}
    if prob.df_dy is not None:
        out["df_dy"] = prob.df_dy(x, t, y, q, M)
    if prob.df_dq is not None:
        out["df_dq"] = prob.df_dq(x, t, y, q, M)
    if prob.dB_dy is not None:
        out["dB_dy"] = prob.dB_dy(x, t, y, q)
    if prob.dB_dq is not None:
        out["dB_dq"] = prob.dB_dq(x, t, y, q)
    for name in ("dg_dy", "dg_dq", "dg_dp"):
        fn = getattr(prob, name)
        if fn is not None:
            out[name] = fn(x, t, y, q, p)
    return out


def random_states(prob, n, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        A = rng.uniform(-2, 2, (2, 2))
        yield (
            rng.uniform(0, 1, 2),
            float(rng.uniform(0, 1)),
            float(rng.uniform(-1, 2)),
            rng.uniform(-2, 2, 2),
            0.5 * (A + A.T),
            rng.uniform(-2, 2, prob.m),
        )


def check_partials(prob, n_samples=100, seed=0, rel_step=1e-7):
    """Largest relative mismatch between declared and finite-difference
    partials over random states, per partial name."""
    worst = {}
    for x, t, y, q, M, p in random_states(prob, n_samples, seed):
        fd = finite_difference_partials(prob, x, t, y, q, M, p, rel_step)
        for name, val in analytic_partials(prob, x, t, y, q, M, p).items():
            a = np.broadcast_to(np.asarray(val, dtype=float), np.shape(fd[name]))
            err = np.max(np.abs(a - fd[name]) / np.maximum(1.0, np.abs(a)), initial=0.0)
            worst[name] = max(worst.get(name, 0.0), float(err))
    return worst


def check_monotone(prob, n_samples=1000, seed=0, dy=1e-3):
    """Smallest forward difference in y of f, B, g and -B.g over random states
    (non-negative when the monotonicity hypotheses hold)."""
    lowest = np.inf
    for x, t, y, q, M, p in random_states(prob, n_samples, seed):
        def parts(s):
            B = prob.B(x, t, s, q)
            g = prob.g(x, t, s, q, p)
            return np.concatenate([np.atleast_1d(prob.f(x, t, s, q, M)), B, g, [-np.dot(B, g)]])

        lowest = min(lowest, float(np.min(parts(y + dy) - parts(y))))
    return lowest


# ---------------------------------------------------------------- builtins

PI = np.pi


def _trace(M):
    return M[..., 0, 0] + M[..., 1, 1]


def _zeros_like_y(y, *trail):
    return np.zeros(np.shape(y) + trail)


def _sinsin(x):
    return np.sin(PI * x[..., 0]) * np.sin(PI * x[..., 1])


def _as_field(value):
    if callable(value):
        return value
    c = float(value)
    return lambda x: np.full(np.shape(x)[:-1], c)


def reaction_diffusion(nu=0.01, c=2.0, u0=None, boundary="dirichlet"):
    """Logistic reaction-diffusion with the control slaved to the state,
    p = c u, entering as -u p."""
    if nu < 0 or c <= 0:
        raise InvalidArgumentError("reaction-diffusion needs nu >= 0 and c > 0")
    u0 = (lambda x: 0.5 * _sinsin(x)) if u0 is None else _as_field(u0)
    if boundary not in ("dirichlet", "natural"):
        raise InvalidArgumentError(f"unknown boundary mode {boundary!r}")
    dirichlet = (lambda x, t: u0(x)) if boundary == "dirichlet" else None
    return ProblemSpec(
        name="reaction-diffusion",
        m=1,
        f=lambda x, t, y, q, M: nu * _trace(M) + y * (1.0 - y),
        B=lambda x, t, y, q: (-np.asarray(y, dtype=float))[..., None],
        g=lambda x, t, y, q, p: p - c * np.asarray(y, dtype=float)[..., None],
        y0=u0,
        dirichlet=dirichlet,
        df_dy=lambda x, t, y, q, M: 1.0 - 2.0 * np.asarray(y, dtype=float),
        df_dq=lambda x, t, y, q, M: _zeros_like_y(y, 2),
        dB_dy=lambda x, t, y, q: np.full(np.shape(y) + (1,), -1.0),
        dB_dq=lambda x, t, y, q: _zeros_like_y(y, 1, 2),
        dg_dy=lambda x, t, y, q, p: np.full(np.shape(y) + (1,), -c),
        dg_dq=lambda x, t, y, q, p: _zeros_like_y(y, 1, 2),
        dg_dp=lambda x, t, y, q, p: np.ones(np.shape(y) + (1, 1)),
        C_f=0.25,
        C_g=c,
        params={"nu": nu, "c": c, "boundary": boundary},
    )


def control_set(size=16):
    """``size`` unit velocities evenly spaced on the circle."""
    if size < 1:
        raise InvalidArgumentError("control set needs at least one point")
    theta = 2 * PI * np.arange(size) / size
    return np.column_stack([np.cos(theta), np.sin(theta)])


def _default_obstacle(x, t):
    r2 = (x[..., 0] - 0.5) ** 2 + (x[..., 1] - 0.5) ** 2
    return 0.25 - 2.0 * r2


def hj_obstacle(
    controls=None,
    velocity=None,
    cost=None,
    obstacle=None,
    y0=None,
    mode="complementarity",
    lipschitz=None,
):
    """Optimal-control Hamilton-Jacobi equation kept above an obstacle.

    f = -max_a [b(x, t, a) . q + l(x, t, a)] over a finite control sample,
    B = 1 and the multiplier is the obstacle reaction. ``mode`` selects the
    semismooth complementarity function min(y - psi, lambda) or the literal
    equality y - psi.
    """
    A = control_set(16) if controls is None else np.asarray(controls, dtype=float)
    if A.ndim == 1:
        A = np.column_stack([A, np.zeros_like(A)])
    velocity = velocity or (lambda x, t, a: np.broadcast_to(a, np.shape(x)[:-1] + (2,)))
    cost = cost or (lambda x, t, a: np.zeros(np.shape(x)[:-1]))
    psi = obstacle or _default_obstacle
    y0 = y0 or (lambda x: 0.5 * _sinsin(x))
    if mode not in ("complementarity", "equality"):
        raise InvalidArgumentError(f"unknown obstacle mode {mode!r}")

    def hamiltonian_terms(x, t, q):
        return np.stack(
            [np.einsum("...i,...i->...", velocity(x, t, a), q) + cost(x, t, a) for a in A],
            axis=-1,
        )

    def f(x, t, y, q, M):
        return -hamiltonian_terms(x, t, q).max(axis=-1)

    def df_dq(x, t, y, q, M):
        k = hamiltonian_terms(x, t, q).argmax(axis=-1)
        b = np.stack([velocity(x, t, a) for a in A], axis=-2)  # (..., K, 2)
        return -np.take_along_axis(b, k[..., None, None], axis=-2)[..., 0, :]

    if mode == "complementarity":
        def g(x, t, y, q, p):
            return np.minimum(np.asarray(y)[..., None] - psi(x, t)[..., None], p)

        def dg_dy(x, t, y, q, p):
            return (np.asarray(y)[..., None] - psi(x, t)[..., None] < p).astype(float)

        def dg_dp(x, t, y, q, p):
            return (np.asarray(y)[..., None] - psi(x, t)[..., None] >= p).astype(float)[..., None]
    else:
        def g(x, t, y, q, p):
            return np.broadcast_to(np.asarray(y)[..., None] - psi(x, t)[..., None], np.shape(p)).copy()

        def dg_dy(x, t, y, q, p):
            return np.ones(np.shape(y) + (1,))

        def dg_dp(x, t, y, q, p):
            return np.zeros(np.shape(y) + (1, 1))

    speed = float(np.max(np.hypot(A[:, 0], A[:, 1])))
    lip = 0.5 * PI if lipschitz is None else lipschitz
    return ProblemSpec(
        name="hj-obstacle",
        m=1,
        f=f,
        B=lambda x, t, y, q: np.ones(np.shape(y) + (1,)),
        g=g,
        y0=y0,
        dirichlet=lambda x, t: y0(x),
        df_dy=lambda x, t, y, q, M: _zeros_like_y(y),
        df_dq=df_dq,
        dB_dy=lambda x, t, y, q: _zeros_like_y(y, 1),
        dB_dq=lambda x, t, y, q: _zeros_like_y(y, 1, 2),
        dg_dy=dg_dy,
        dg_dq=lambda x, t, y, q, p: _zeros_like_y(y, 1, 2),
        dg_dp=dg_dp,
        p0=(lambda x: np.zeros(np.shape(x)[:-1])) if mode == "equality" else None,
        C_f=speed * lip,
        C_g=1.0,
        first_order=True,
        constraint_quadrature="nodal",
        params={"controls": len(A), "mode": mode, "obstacle": psi},
    )


def _heat_exact(x, t):
    return np.exp(-t) * _sinsin(x)


def manufactured_heat():
    """Heat equation with a slaved multiplier p = y acting as linear decay.

    y_t = lap y - p + s,  p - y = 0,  exact y = exp(-t) sin(pi x1) sin(pi x2),
    so the source is s = 2 pi^2 y.
    """
    def source(x, t):
        return 2 * PI**2 * _heat_exact(x, t)

    return ProblemSpec(
        name="manufactured-heat",
        m=1,
        f=lambda x, t, y, q, M: _trace(M) + source(x, t),
        B=lambda x, t, y, q: np.full(np.shape(y) + (1,), -1.0),
        g=lambda x, t, y, q, p: p - np.asarray(y, dtype=float)[..., None],
        y0=lambda x: _heat_exact(x, 0.0),
        dirichlet=_heat_exact,
        df_dy=lambda x, t, y, q, M: _zeros_like_y(y),
        df_dq=lambda x, t, y, q, M: _zeros_like_y(y, 2),
        dB_dy=lambda x, t, y, q: _zeros_like_y(y, 1),
        dB_dq=lambda x, t, y, q: _zeros_like_y(y, 1, 2),
        dg_dy=lambda x, t, y, q, p: np.full(np.shape(y) + (1,), -1.0),
        dg_dq=lambda x, t, y, q, p: _zeros_like_y(y, 1, 2),
        dg_dp=lambda x, t, y, q, p: np.ones(np.shape(y) + (1, 1)),
        exact=_heat_exact,
        exact_multiplier=lambda x, t: _heat_exact(x, t)[..., None],
        C_f=4 * PI**2,
        C_g=1.0,
        params={"source": source},
    )


def heat(nu=0.01, y0=None):
    """Linear diffusion with a trivial constraint (p = 0); satisfies the
    monotonicity hypotheses."""
    y0 = y0 or _sinsin
    return ProblemSpec(
        name="heat",
        m=1,
        f=lambda x, t, y, q, M: nu * _trace(M),
        B=lambda x, t, y, q: _zeros_like_y(y, 1),
        g=lambda x, t, y, q, p: np.array(p, dtype=float, copy=True),
        y0=y0,
        dirichlet=lambda x, t: np.zeros(np.shape(x)[:-1]),
        df_dy=lambda x, t, y, q, M: _zeros_like_y(y),
        df_dq=lambda x, t, y, q, M: _zeros_like_y(y, 2),
        dB_dy=lambda x, t, y, q: _zeros_like_y(y, 1),
        dB_dq=lambda x, t, y, q: _zeros_like_y(y, 1, 2),
        dg_dy=lambda x, t, y, q, p: _zeros_like_y(y, 1),
        dg_dq=lambda x, t, y, q, p: _zeros_like_y(y, 1, 2),
        dg_dp=lambda x, t, y, q, p: np.ones(np.shape(y) + (1, 1)),
        C_f=2 * PI**2 * nu,
        C_g=0.0,
        monotone=True,
        params={"nu": nu},
    )


BUILTINS = {
    "reaction-diffusion": reaction_diffusion,
    "hj-obstacle": hj_obstacle,
    "manufactured-heat": manufactured_heat,
    "heat": heat,
}


def get_problem(name, **params):
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise InvalidArgumentError(
            f"unknown problem {name!r}; choose from {sorted(BUILTINS)}"
        ) from None
    return factory(**params)
