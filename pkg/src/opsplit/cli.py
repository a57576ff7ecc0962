"""Command-line entry point: ``opsplit run | converge | check``."""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import harness
from .errors import InvalidArgumentError, StepError
from .io import write_state_vtk, write_trajectory_csv
from .mesh import build_unit_square_mesh
from .problems import BUILTINS, control_set, get_problem
from .scheme import SchemeParams, run

# config keys that configure the problem rather than the scheme
PROBLEM_KEYS = {
    "reaction-diffusion": {"nu": float, "c": float, "boundary": str, "u0": float},
    "hj-obstacle": {"controls": int, "obstacle-height": float, "mode": str},
    "heat": {"nu": float},
    "manufactured-heat": {},
}


def read_config(path):
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgumentError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("_", "-")] = value
    return out


def build_problem(name, options):
    if name not in BUILTINS:
        raise InvalidArgumentError(f"unknown problem {name!r}; choose from {sorted(BUILTINS)}")
    kwargs = {}
    for key, kind in PROBLEM_KEYS[name].items():
        if key in options:
            kwargs[key] = kind(options[key])
    if name == "hj-obstacle":
        if "controls" in kwargs:
            kwargs["controls"] = control_set(kwargs["controls"])
        if "obstacle-height" in kwargs:
            level = kwargs.pop("obstacle-height")
            kwargs["obstacle"] = lambda x, t: np.full(np.shape(x)[:-1], level)
    return get_problem(name, **kwargs)


def _merged(args, defaults):
    """Config-file values under explicit flags."""
    opts = read_config(args.config) if getattr(args, "config", None) else {}
    for key, value in vars(args).items():
        if value is not None and key not in ("command", "config", "func"):
            opts[key.replace("_", "-")] = value
    for key, value in defaults.items():
        opts.setdefault(key, value)
    return opts


def _params(opts):
    return SchemeParams(
        T=float(opts["T"]),
        mu=float(opts["mu"]),
        dt_ratio=float(opts["dt-ratio"]),
    )


def cmd_run(args):
    opts = _merged(args, {"T": 1.0, "mu": 1.0, "dt-ratio": 0.5, "vtk-stride": 1})
    if "problem" not in opts or "n" not in opts:
        raise InvalidArgumentError("run needs --problem and --n (flag or config)")
    prob = build_problem(str(opts["problem"]), opts)
    mesh = build_unit_square_mesh(int(opts["n"]))
    params = _params(opts)
    stride = int(opts["vtk-stride"])
    vtk = opts.get("vtk")

    def observer(state):
        if vtk and (state.step % stride == 0):
            write_state_vtk(_vtk_name(vtk, state.step), state)

    status = 0
    try:
        traj = run(prob, mesh, params, keep_every=10**9, observer=observer)
        rows = traj.rows
        if vtk:
            write_state_vtk(_vtk_name(vtk, 0), traj.states[0])
    except StepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        rows = exc.trajectory.rows if exc.trajectory is not None else []
        status = 1
    if opts.get("csv"):
        write_trajectory_csv(opts["csv"], rows)
    last = rows[-1] if rows else None
    if last:
        print(
            f"{prob.name}: n={int(opts['n'])} steps={last['step']} t={last['t']:.6g} "
            f"sup={last['sup_norm']:.6g} constraint={last['constraint_residual']:.3e}"
        )
    return status


def _vtk_name(template, step):
    if "{step" in template:
        return template.format(step=step)
    p = Path(template)
    return str(p.with_name(f"{p.stem}_{step:05d}{p.suffix or '.vtk'}"))


def cmd_converge(args):
    opts = _merged(args, {"T": 0.25, "mu": 1.0, "dt-ratio": 0.5, "levels": "8,16,32"})
    if "problem" not in opts:
        raise InvalidArgumentError("converge needs --problem (flag or config)")
    prob = build_problem(str(opts["problem"]), opts)
    if prob.exact is None:
        raise InvalidArgumentError(f"problem {prob.name!r} has no exact solution to converge to")
    levels = [int(s) for s in str(opts["levels"]).split(",") if s.strip()]
    try:
        table = harness.convergence_study(prob, levels, _params(opts))
    except StepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    text = table.to_csv()
    if opts.get("csv"):
        Path(opts["csv"]).write_text(text)
    print(text, end="")
    ok = table.passes()
    print(f"final rate {table.final_rate:.3f} (gate {harness.RATE_GATE}): {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_check(args):
    suites = ["consistency", "stability", "monotonicity"] if args.suite == "all" else [args.suite]
    seed = harness.DEFAULT_SEED if args.seed is None else args.seed
    ok = True
    for name in suites:
        if name == "consistency":
            rep = harness.default_consistency()
            print(rep.to_csv(), end="")
            passed = bool(rep.passed)
        elif name == "stability":
            reps = harness.default_stability()
            for r in reps:
                print(f"{r.problem}: sup={r.sup_norm:.6g} bound={r.bound:.6g} {'PASS' if r.passed else 'FAIL'} {r.error}")
            passed = all(r.passed for r in reps)
        else:
            rep = harness.default_monotonicity(seed=seed)
            print(f"seed={seed} max relative violation={rep.max_violation:.3e}")
            passed = rep.passed
        print(f"{name}: {'PASS' if passed else 'FAIL'}")
        ok &= passed
    return 0 if ok else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="opsplit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="time-step one problem")
    p.add_argument("--problem")
    p.add_argument("--n", type=int)
    p.add_argument("--T", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--dt-ratio", type=float)
    p.add_argument("--vtk", help="snapshot path; '{step}' is substituted if present")
    p.add_argument("--vtk-stride", type=int)
    p.add_argument("--csv")
    p.add_argument("--config")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("converge", help="convergence study against an exact solution")
    p.add_argument("--problem")
    p.add_argument("--levels")
    p.add_argument("--T", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--dt-ratio", type=float)
    p.add_argument("--csv")
    p.add_argument("--config")
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("check", help="property suites")
    p.add_argument("--suite", choices=["consistency", "stability", "monotonicity", "all"], default="all")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InvalidArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
