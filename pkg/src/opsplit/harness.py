"""Convergence studies and the property suites (consistency, stability,
monotonicity), with CSV serialisation of every report."""

import csv
import io
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .errors import StepError
from .mesh import build_unit_square_mesh
from .problems import BUILTINS, get_problem, heat
from .scheme import Operators, SchemeParams, SmoothField, apply_discrete_operator, run
from .spaces import DUNAVANT6

RATE_GATE = 0.9  # first order with epsilon = 0.1
CONSISTENCY_GATE = 1.6
EXACT_FLOOR = 1e-10
STABILITY_SLACK = 1e-6
MONOTONE_TOL = 1e-8
DEFAULT_SEED = 20240601


def error_norms(y, exact, t):
    """(L-infinity at DOF nodes, L2, H1 seminorm) of ``y - exact(., t)``.

    ``exact`` is vectorised over points (..., 2); an FeFunction on the same
    space is also accepted.
    """
    V = y.space
    if hasattr(exact, "coeffs"):
        d = y - exact
        val, grad = d.at_quadrature(DUNAVANT6)
        _, w = V.quadrature_points(DUNAVANT6)
        return (
            float(np.abs(d.coeffs).max()),
            math.sqrt(float(np.sum(w * val**2))),
            math.sqrt(float(np.sum(w * np.sum(grad**2, axis=-1)))),
        )
    linf = float(np.abs(y.coeffs - exact(V.nodes, t)).max())
    x, w = V.quadrature_points(DUNAVANT6)
    val, grad = y.at_quadrature(DUNAVANT6)
    err = val - exact(x, t)
    l2 = math.sqrt(float(np.sum(w * err**2)))
    gex = _numeric_gradient(exact, x, t)
    h1 = math.sqrt(float(np.sum(w * np.sum((grad - gex) ** 2, axis=-1))))
    return linf, l2, h1


def _numeric_gradient(fun, x, t, step=1e-6):
    out = np.empty(x.shape)
    for i in range(2):
        e = np.zeros(2)
        e[i] = step
        out[..., i] = (fun(x + e, t) - fun(x - e, t)) / (2 * step)
    return out


def observed_rates(errors):
    """log2(e_k / e_{k+1}) for consecutive levels; NaN where undefined."""
    out = []
    for a, b in zip(errors[:-1], errors[1:]):
        out.append(math.log2(a / b) if a > 0 and b > 0 else float("nan"))
    return out


@dataclass
class ConvergenceRow:
    level: int
    h: float
    dt: float
    error_linf: float
    error_l2: float
    error_h1: float
    rate: float = float("nan")


@dataclass
class ConvergenceTable:
    rows: list = field(default_factory=list)
    saturated_below: float = EXACT_FLOOR

    @property
    def rates(self):
        return [r.rate for r in self.rows[1:]]

    @property
    def final_rate(self):
        return self.rows[-1].rate if len(self.rows) > 1 else float("nan")

    @property
    def saturated(self):
        return bool(self.rows) and all(r.error_linf <= self.saturated_below for r in self.rows)

    def passes(self, gate=RATE_GATE):
        return self.saturated or (self.final_rate >= gate)

    def to_csv(self):
        return rows_to_csv(self.rows, ConvergenceRow)

    @classmethod
    def from_csv(cls, text):
        return cls(rows=rows_from_csv(text, ConvergenceRow))


def convergence_study(prob, levels, params):
    """Run ``prob`` on the unit-square meshes in ``levels`` and tabulate the
    final-time errors against ``prob.exact``."""
    if prob.exact is None:
        raise ValueError(f"problem {prob.name!r} declares no exact solution")
    table = ConvergenceTable()
    for n in levels:
        mesh = build_unit_square_mesh(n)
        try:
            traj = run(prob, mesh, params, keep_every=10**9)
        except StepError as exc:
            raise StepError(f"level n={n}: {exc}", step=exc.step, trajectory=exc.trajectory, report=exc.report) from exc
        final = traj.final
        linf, l2, h1 = error_norms(final.y, prob.exact, final.t)
        table.rows.append(ConvergenceRow(n, mesh.h, traj.dt, linf, l2, h1))
    errs = [r.error_linf for r in table.rows]
    for row, rate in zip(table.rows[1:], observed_rates(errs)):
        row.rate = rate
    return table


# ----------------------------------------------------------------- suites


@dataclass
class MonotonicityRow:
    trial: int
    seed: int
    violation: float
    z_norm: float
    relative: float


@dataclass
class MonotonicityReport:
    rows: list = field(default_factory=list)
    tol: float = MONOTONE_TOL

    @property
    def max_violation(self):
        return max((r.relative for r in self.rows), default=0.0)

    @property
    def passed(self):
        return self.max_violation <= self.tol

    def to_csv(self):
        return rows_to_csv(self.rows, MonotonicityRow)


def random_bump(rng):
    """Smooth non-negative bump vanishing on the boundary of the unit square."""
    amp = rng.uniform(0.1, 1.0)
    cx, cy = rng.uniform(0.2, 0.8, 2)
    width = rng.uniform(0.2, 0.5)

    def bump(x):
        r2 = (x[..., 0] - cx) ** 2 + (x[..., 1] - cy) ** 2
        return amp * np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1]) * np.exp(-r2 / (2 * width**2))

    return bump


def monotonicity_suite(prob, mesh, params, trials=20, seed=DEFAULT_SEED, bump_factory=random_bump):
    """Max nodal ordering violation (y_m - z_m)_+ over seeded trials, where
    z0 = y0 + non-negative bump. ``prob`` is rebuilt with the perturbed
    initial data through ``dataclasses.replace``."""
    report = MonotonicityReport()
    if trials <= 0:
        return report
    ops = Operators(mesh, params.mu)
    base = run(prob, mesh, params, ops=ops)
    for k in range(trials):
        rng = np.random.default_rng([seed, k])
        bump = bump_factory(rng)
        y0 = prob.y0
        upper = replace(prob, y0=lambda x, b=bump: y0(x) + b(x))
        other = run(upper, mesh, params, ops=ops)
        viol, znorm = 0.0, 0.0
        for a, b in zip(base.states, other.states):
            viol = max(viol, float(np.max(a.y.coeffs - b.y.coeffs, initial=0.0)))
            znorm = max(znorm, float(np.abs(b.y.coeffs).max()))
        report.rows.append(MonotonicityRow(k, seed, viol, znorm, viol / znorm if znorm > 0 else viol))
    return report


@dataclass
class StabilityReport:
    problem: str
    sup_norm: float
    initial_norm: float
    bound: float
    passed: bool
    error: str = ""

    def to_csv(self):
        return rows_to_csv([self], StabilityReport)


def stability_suite(prob, mesh, params):
    """Check sup_m |y^m|_inf <= |y^0|_inf + T (C_f + C_g) + 1e-6.

    A run that aborts (typically from blow-up) is reported as a failure with
    the largest norm reached before the abort.
    """
    if prob.C_f is None or prob.C_g is None:
        raise ValueError(f"problem {prob.name!r} declares no sup bounds")
    error = ""
    try:
        rows = run(prob, mesh, params).rows
    except StepError as exc:
        rows = exc.trajectory.rows if exc.trajectory is not None else []
        error = str(exc)
    y0 = rows[0]["sup_norm"] if rows else float("nan")
    sup = max((r["sup_norm"] for r in rows), default=float("nan"))
    bound = y0 + params.T * (prob.C_f + prob.C_g)
    passed = not error and sup <= bound + STABILITY_SLACK
    return StabilityReport(prob.name, sup, y0, bound, bool(passed), error)


@dataclass
class ConsistencyRow:
    level: int
    h: float
    r1: float
    r2: float
    r3: float
    ratio1: float = float("nan")
    ratio2: float = float("nan")
    ratio3: float = float("nan")


@dataclass
class ConsistencyReport:
    rows: list = field(default_factory=list)
    gate: float = CONSISTENCY_GATE
    floor: float = EXACT_FLOOR

    def _component_ok(self, k):
        a = getattr(self.rows[-2], f"r{k}")
        b = getattr(self.rows[-1], f"r{k}")
        if a <= self.floor and b <= self.floor:
            return True  # exact at this resolution
        return getattr(self.rows[-1], f"ratio{k}") >= self.gate

    @property
    def exact(self):
        return bool(self.rows) and all(max(r.r1, r.r2, r.r3) <= self.floor for r in self.rows)

    @property
    def passed(self):
        if self.exact:
            return True
        if len(self.rows) < 2:
            return None  # informational
        return all(self._component_ok(k) for k in (1, 2, 3))

    def to_csv(self):
        return rows_to_csv(self.rows, ConsistencyRow)


def _ratio(a, b):
    if b > 0:
        return a / b
    return float("inf") if a > 0 else float("nan")


def consistency_suite(prob, phi, p_exact, levels, params, t_m=0.0):
    report = ConsistencyReport()
    for n in levels:
        mesh = build_unit_square_mesh(n)
        res = apply_discrete_operator(prob, phi, p_exact, mesh, params, t_m)
        row = ConsistencyRow(n, mesh.h, res.r1, res.r2, res.r3)
        if report.rows:
            prev = report.rows[-1]
            row.ratio1, row.ratio2, row.ratio3 = (
                _ratio(prev.r1, row.r1),
                _ratio(prev.r2, row.r2),
                _ratio(prev.r3, row.r3),
            )
        report.rows.append(row)
    return report


# ----------------------------------------------------------- test functions


def trig_field(decay=1.0):
    """exp(-decay t) sin(pi x1) sin(pi x2) with analytic derivatives."""
    pi = np.pi

    def s(x):
        return np.sin(pi * x[..., 0]) * np.sin(pi * x[..., 1])

    def c(x):
        return np.cos(pi * x[..., 0]) * np.cos(pi * x[..., 1])

    def grad(x, t):
        g = np.stack(
            [np.cos(pi * x[..., 0]) * np.sin(pi * x[..., 1]), np.sin(pi * x[..., 0]) * np.cos(pi * x[..., 1])],
            axis=-1,
        )
        return pi * np.exp(-decay * t) * g

    def hess(x, t):
        H = np.empty(np.shape(x)[:-1] + (2, 2))
        H[..., 0, 0] = H[..., 1, 1] = -s(x)
        H[..., 0, 1] = H[..., 1, 0] = c(x)
        return pi**2 * np.exp(-decay * t) * H

    return SmoothField(
        value=lambda x, t: np.exp(-decay * t) * s(x),
        dt=lambda x, t: -decay * np.exp(-decay * t) * s(x),
        grad=grad,
        hess=hess,
        name="trig",
    )


def affine_field(a=0.3, b=(1.0, -0.5)):
    b = np.asarray(b, dtype=float)
    return SmoothField(
        value=lambda x, t: a + x @ b,
        dt=lambda x, t: np.zeros(np.shape(x)[:-1]),
        grad=lambda x, t: np.broadcast_to(b, np.shape(x)).copy(),
        hess=lambda x, t: np.zeros(np.shape(x)[:-1] + (2, 2)),
        name="affine",
    )


def slaved_multiplier(phi):
    """p = phi, for problems whose constraint is p - y = 0."""
    return lambda x, t: phi.value(x, t)[..., None]


# ------------------------------------------------------------------- CSV


def rows_to_csv(rows, row_type):
    names = [f.name for f in fields(row_type)]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=names, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: _fmt(v) for k, v in asdict(r).items()})
    return buf.getvalue()


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else v


def rows_from_csv(text, row_type):
    out = []
    types = {f.name: f.type for f in fields(row_type)}
    for rec in csv.DictReader(io.StringIO(text)):
        out.append(row_type(**{k: _parse(types[k], v) for k, v in rec.items()}))
    return out


def _parse(kind, text):
    kind = kind if isinstance(kind, str) else kind.__name__
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    if kind == "bool":
        return text == "True"
    return text


def report_from_csv(text, report_type):
    row_type = {
        ConvergenceTable: ConvergenceRow,
        MonotonicityReport: MonotonicityRow,
        ConsistencyReport: ConsistencyRow,
    }.get(report_type)
    if report_type is StabilityReport:
        return rows_from_csv(text, StabilityReport)[0]
    return report_type(rows=rows_from_csv(text, row_type))


# ----------------------------------------------------------- default gates


def default_consistency(levels=(16, 32), params=None):
    params = params or SchemeParams(T=1.0)
    prob = get_problem("manufactured-heat")
    phi = trig_field()
    return consistency_suite(prob, phi, slaved_multiplier(phi), levels, params)


def default_stability(n=16, T=1.0, names=None):
    mesh = build_unit_square_mesh(n)
    return [stability_suite(get_problem(name), mesh, SchemeParams(T=T)) for name in (names or BUILTINS)]


def default_monotonicity(n=8, T=0.1, trials=20, seed=DEFAULT_SEED):
    return monotonicity_suite(heat(), build_unit_square_mesh(n), SchemeParams(T=T), trials, seed)
