"""Command line front end.

Every command reads a model (JSON file and/or inline flags, flags win),
evaluates over the requested grid and writes JSON or CSV.  The resolved
configuration is echoed into each output so a file can be regenerated from
itself.  Exit status: 0 ok, 2 bad configuration, 3 numerical failure.
"""
import argparse
import contextlib
import csv
import io
import json
import math
import sys

from .asymptotics import approx_max_tail, transition_point
from .martingale_check import GridSpec, make_params, verify_proposition
from .quadrature import QuadratureError
from .simulate import (RegimeError, SimulationError, estimate_tail_prob,
                       estimate_tail_prob_tilted)
from .solvers import (BoundaryError, LError, LVariant, ThetaError, solve_boundary,
                      solve_theta)
from .tail_models import ModelError, drifted, model_from_dict, model_to_dict

A_MAX = 0.5
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

NUMERIC_ERRORS = (ThetaError, BoundaryError, LError, QuadratureError, SimulationError)


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# parsing helpers


def _float_list(text):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"not a comma separated list of numbers: {text!r}") from None
    if not vals:
        raise ConfigError("grid is empty")
    steps = [b - a for a, b in zip(vals, vals[1:])]
    if not (all(d > 0 for d in steps) or all(d < 0 for d in steps)):
        raise ConfigError(f"grid must be strictly monotone: {text!r}")
    return vals


def _count(text):
    try:
        val = float(text)
    except ValueError:
        raise ConfigError(f"not a number: {text!r}") from None
    if val != int(val) or val < 1:
        raise ConfigError(f"expected a positive integer, got {text!r}")
    return int(val)


def _variant(name):
    return {"proof": LVariant.PROOF_SQUARED, "example": LVariant.EXAMPLE_FIRST_POWER}[name]


def _load_model(args):
    spec = {}
    if args.model:
        try:
            with open(args.model) as fh:
                spec = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read model file: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"model file {args.model} is not valid JSON: {exc}") from None
        if not isinstance(spec, dict):
            raise ConfigError("model file must hold a JSON object")
    spec = dict(spec)
    params = dict(spec.get("params", {}))
    if args.family:
        if spec.get("family") and spec["family"].lower() != args.family.lower():
            params = {}
        spec["family"] = args.family
    for key in ("r", "gamma", "beta", "p"):
        val = getattr(args, key)
        if val is not None:
            params[key] = val
    for item in args.param or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--param expects KEY=VALUE, got {item!r}")
        try:
            params[key] = json.loads(val)
        except json.JSONDecodeError:
            params[key] = val
    spec["params"] = params
    if "family" not in spec:
        raise ConfigError("no model given (use --model or --family)")
    return model_from_dict(spec)


def _a_values(args):
    if getattr(args, "a_grid", None):
        vals = _float_list(args.a_grid)
    elif getattr(args, "a", None) is not None:
        vals = [args.a]
    else:
        raise ConfigError("give --a or --a-grid")
    for a in vals:
        if not 0 < a <= A_MAX:
            raise ConfigError(f"a = {a} is outside (0, {A_MAX}]")
    return vals


def _x_values(args, required=True):
    if getattr(args, "x_grid", None) and args.x_grid != "auto":
        return _float_list(args.x_grid)
    if getattr(args, "x", None) is not None:
        if not args.x > 0:
            raise ConfigError("x must be positive")
        return [args.x]
    if getattr(args, "x_grid", None) == "auto":
        return "auto"
    if required:
        raise ConfigError("give --x or --x-grid")
    return None


def auto_x_grid(inc, variant, p_min=1e-4):
    """{0.5, 1, 2} x(a), keeping the points where the formula gives p >= p_min."""
    x_a = solve_boundary(inc).x_a
    grid = [f * x_a for f in (0.5, 1.0, 2.0)]
    return [x for x in grid if approx_max_tail(inc, x, variant).total >= p_min]


@contextlib.contextmanager
def _at(a):
    """Prefix numerical failures with the drift they happened at."""
    try:
        yield
    except NUMERIC_ERRORS as exc:
        raise type(exc)(f"a = {a}: {exc}") from exc


# ---------------------------------------------------------------------------
# commands; each returns a list of flat dict rows


def cmd_theta(args, model):
    rows = []
    for a in _a_values(args):
        with _at(a):
            sol = solve_theta(drifted(model, a))
            rows.append({"a": a, "theta": sol.theta, "residual": sol.residual,
                         "normalised": sol.normalised, "iterations": sol.iterations})
    return rows


def cmd_boundary(args, model):
    rows = []
    for a in _a_values(args):
        with _at(a):
            bp = solve_boundary(drifted(model, a))
            rows.append({"a": a, "theta": bp.theta, "x_a": bp.x_a, "c_a": bp.c_a,
                         "kappa": bp.kappa, "lambda": bp.lam, "mono_ratio": bp.mono_ratio,
                         "residual": bp.residual})
    return rows


def cmd_approx(args, model):
    variant = _variant(args.l_variant)
    rows = []
    for a in _a_values(args):
        with _at(a):
            inc = drifted(model, a)
            xs = _x_values(args)
            if xs == "auto":
                xs = auto_x_grid(inc, variant)
            for x in xs:
                est = approx_max_tail(inc, x, variant)
                rows.append({"a": a, "x": x, "exp_term": est.exp_term, "tail_term": est.tail_term,
                             "total": est.total, "log_total": est.log_total,
                             "regime": est.regime.value, "L": est.L})
    return rows


def cmd_transition(args, model):
    variant = _variant(args.l_variant)
    rows = []
    for a in _a_values(args):
        with _at(a):
            tp = transition_point(drifted(model, a), variant)
            row = {"a": a, "x_star": tp.x_star}
            row.update(tp.formula_terms)
            row["numeric_cross"] = tp.numeric_cross
            row["rel_error"] = tp.numeric_cross / tp.x_star - 1.0
            rows.append(row)
    return rows


def cmd_verify_martingale(args, model):
    variant = _variant(args.l_variant)
    rows = []
    reports = []
    for a in _a_values(args):
        with _at(a):
            inc = drifted(model, a)
            params = None
            if args.delta is not None:
                params = make_params(inc, variant, args.delta, args.eps, args.alpha)
            rep = verify_proposition(inc, params, GridSpec(points=args.points), variant,
                                     eps=args.eps, alpha=args.alpha, slack=args.slack)
            reports.append((a, rep))
            for t, sd, bd, sm, bm in zip(rep.t_grid, rep.super_drift, rep.sub_drift,
                                         rep.super_margin, rep.sub_margin):
                rows.append({"a": a, "t": t, "super_drift": sd, "sub_drift": bd,
                             "super_margin": sm, "sub_margin": bm})
    if args.format == "json":
        return [dict(a=a, **json.loads(rep.to_json())) for a, rep in reports]
    return rows


def _mc_rows(est):
    return {"a": est.a, "x": est.x, "n": est.n, "p_hat": est.p_hat, "ci_low": est.ci_low,
            "ci_high": est.ci_high, "seed": est.seed, "workers": est.workers,
            "method": est.method, "stop_barrier": est.stop_barrier,
            "truncation_bias_bound": est.truncation_bias_bound}


def cmd_simulate(args, model):
    rows = []
    for a in _a_values(args):
        with _at(a):
            inc = drifted(model, a)
            xs = _x_values(args)
            if xs == "auto":
                xs = auto_x_grid(inc, _variant(args.l_variant))
            if args.tilted:
                ests = [estimate_tail_prob_tilted(inc, x, args.n, args.seed, args.workers)
                        for x in xs]
            else:
                ests = estimate_tail_prob(inc, xs, args.n, args.seed, args.workers)
            rows.extend(_mc_rows(e) for e in ests)
    return rows


def cmd_compare(args, model):
    variant = _variant(args.l_variant)
    rows = []
    for a in _a_values(args):
        with _at(a):
            inc = drifted(model, a)
            xs = _x_values(args)
            if xs == "auto":
                xs = auto_x_grid(inc, variant)
            if not xs:
                continue
            ests = estimate_tail_prob(inc, xs, args.n, args.seed, args.workers)
            for x, est in zip(xs, ests):
                total = approx_max_tail(inc, x, variant).total
                rows.append({"a": a, "x": x, "mc_p": est.p_hat, "mc_ci_low": est.ci_low,
                             "mc_ci_high": est.ci_high, "formula_total": total,
                             "ratio": est.p_hat / total,
                             "within_ci": est.ci_low <= total <= est.ci_high})
    return rows


COMMANDS = {
    "theta": cmd_theta,
    "boundary": cmd_boundary,
    "approx": cmd_approx,
    "transition": cmd_transition,
    "verify-martingale": cmd_verify_martingale,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
}


# ---------------------------------------------------------------------------
# output


def _plain(v):
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


def _cell(v):
    if isinstance(v, (bool, str, int)):
        return v
    return repr(float(v))


def render(rows, config, fmt):
    if fmt == "json":
        doc = {"config": config, "results": rows}
        return json.dumps(doc, sort_keys=True, indent=2, default=_plain) + "\n"
    buf = io.StringIO()
    buf.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
    if rows:
        fields = list(rows[0])
        for r in rows[1:]:
            fields.extend(k for k in r if k not in fields)
        w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _cell(v) for k, v in r.items()})
    return buf.getvalue()


def build_parser():
    parser = argparse.ArgumentParser(prog="asymtail",
                                     description="Tail of the maximum of a drifted random walk.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--model", help="JSON model file")
        p.add_argument("--family", help="model family (overrides the file)")
        p.add_argument("--param", action="append", metavar="KEY=VALUE",
                       help="model parameter (repeatable, overrides the file)")
        for key in ("r", "gamma", "beta", "p"):
            p.add_argument(f"--{key}", type=float)
        p.add_argument("--a", type=float)
        p.add_argument("--a-grid")
        p.add_argument("--l-variant", choices=["proof", "example"], default="example")
        p.add_argument("--format", choices=["json", "csv"], default="json")
        p.add_argument("--out", help="output path (default: stdout)")
        if name in ("approx", "simulate", "compare"):
            p.add_argument("--x", type=float)
            p.add_argument("--x-grid", help="comma separated levels, or 'auto'")
        if name in ("simulate", "compare"):
            p.add_argument("--n", default="1e6")
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--workers", type=int, default=1)
        if name == "simulate":
            p.add_argument("--tilted", action="store_true",
                           help="exponentially tilted estimator (exp-dominant levels only)")
        if name == "verify-martingale":
            p.add_argument("--delta", type=float, help="fixed delta (default: 1/4 with halving)")
            p.add_argument("--eps", type=float, default=0.1)
            p.add_argument("--alpha", type=float, default=1.0)
            p.add_argument("--slack", type=float, default=1e-3)
            p.add_argument("--points", type=int, default=400)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if hasattr(args, "n"):
            args.n = _count(args.n)
            if args.workers < 1:
                raise ConfigError("--workers must be at least 1")
        model = _load_model(args)
        config = {k: v for k, v in vars(args).items() if v is not None and k != "out"}
        config["model"] = model_to_dict(model)
        rows = COMMANDS[args.command](args, model)
    except NUMERIC_ERRORS as exc:
        print(f"asymtail {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ModelError, RegimeError, ValueError) as exc:
        print(f"asymtail {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    text = render(rows, config, args.format)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
