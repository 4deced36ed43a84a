"""Command-line front end: ``perpetuity <command> [options]``.

Every run echoes its fully resolved spec (command, model, parameters, seed)
next to the result so it can be replayed. Files are written atomically.
Exit status: 0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import __version__
from .cramer import check_conditions, solve_alpha
from .errors import PerpetuityError, ValidationError
from .factor_models import LogGamma, model_from_dict
from .montecarlo import (
    Adaptive,
    SimulationConfig,
    goldie_constant,
    is_tail_p,
    is_tail_pn,
    simulate_lindley,
    simulate_ruin,
    simulate_Y,
)
from .multivariate import ensemble_from_dict, estimate_lyapunov, mv_tail_estimates, solve_alpha_mv
from .streams import default_workers
from .svgplot import emit_plot
from .tail import COLUMNS, log_grid, tail_curve

TAIL_CSV_COLUMNS = ("log_x", "leading", "normal_approx", "tilted_exact", "ratio_normal", "ratio_tilted")
PER_N_CSV_COLUMNS = ("n", "value", "std_error")
MV_TAIL_CSV_COLUMNS = ("log_x", "p_u", "p_u_se", "p_uv", "p_uv_se", "ratio", "ratio_se")


@dataclass
class ExperimentSpec:
    command: str
    model: dict | None = None
    parameters: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    seed: int | None = None

    def to_dict(self):
        return {"command": self.command, "model": self.model, "parameters": self.parameters,
                "output": self.output, "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(command=d["command"], model=d.get("model"), parameters=dict(d.get("parameters", {})),
                   output=dict(d.get("output", {})), seed=d.get("seed"))


# --- I/O helpers ----------------------------------------------------------------


def atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _num(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    return "nan" if math.isnan(v) else f"{v:.5e}"


def to_csv(columns, rows, spec: ExperimentSpec | None = None, timestamp: bool = True) -> str:
    buf = io.StringIO()
    if spec is not None:
        buf.write("# spec: " + json.dumps(spec.to_dict(), sort_keys=True) + "\n")
    if timestamp:
        buf.write("# generated: " + time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_num(row.get(c)) for c in columns])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def to_json(spec: ExperimentSpec, result: dict) -> str:
    payload = {"version": __version__, "spec": spec.to_dict(), "result": _jsonable(result)}
    return json.dumps(payload, sort_keys=True, allow_nan=False) + "\n"


def _load_json(path: str, what: str):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"{what} file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{what} file {path} is not valid JSON: {exc}") from None


def _floats(text: str, name: str):
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ValidationError(f"--{name} must be a comma-separated list of numbers") from None
    if not vals:
        raise ValidationError(f"--{name} is empty")
    return vals


# --- argument parsing -----------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return v


def _seed(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer seed, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError("seed must be nonnegative")
    return v


def _add_mc(p, paths=100_000):
    p.add_argument("--model", required=True, help="factor model JSON descriptor file")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--paths", type=_positive_int, default=paths)
    p.add_argument("--workers", type=_positive_int, default=None,
                   help="worker threads (default: $PERP_WORKERS or 1)")


def _add_out(p, formats=("json",)):
    p.add_argument("--out", help="write the result here instead of standard output")
    p.add_argument("--format", choices=formats, default=formats[0])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="perpetuity", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("alpha", help="solve h(alpha) = 1")
    p.add_argument("--model", required=True)
    _add_out(p)

    p = sub.add_parser("tail", help="analytic tail curve on a log x grid")
    p.add_argument("--model", required=True)
    p.add_argument("--logx-min", type=float, required=True)
    p.add_argument("--logx-max", type=float, required=True)
    p.add_argument("--per-decade", type=_positive_int, default=50)
    p.add_argument("--columns", default="leading,normal,tilted")
    p.add_argument("--plot", help="also write an SVG of the ratio curves")
    _add_out(p, ("csv", "json"))

    p = sub.add_parser("simulate-y", help="direct simulation of P(Y > x)")
    _add_mc(p)
    p.add_argument("--logx", type=float, required=True)
    p.add_argument("--truncation", default="adaptive", help="'adaptive' or a fixed number of rows")
    p.add_argument("--tolerance", type=float, default=1e-6)
    _add_out(p)

    p = sub.add_parser("is-tail", help="importance-sampling estimate of p(x) or P(Pi_n > x)")
    _add_mc(p, paths=10_000)
    p.add_argument("--logx", type=float, required=True)
    p.add_argument("--n", type=_positive_int, default=None, help="single row n (default: sum over rows)")
    p.add_argument("--n-max", type=_positive_int, default=None)
    p.add_argument("--allocation", choices=("phi", "uniform"), default="phi")
    p.add_argument("--per-n-csv", help="write the per-row breakdown as CSV")
    _add_out(p)

    p = sub.add_parser("ruin", help="P(max_n Pi'_n > x) by tilted first passage")
    _add_mc(p)
    p.add_argument("--logx", type=float, required=True)
    p.add_argument("--modulus", action="store_true", help="estimate P(max |Pi'_n| > x) instead")
    _add_out(p)

    p = sub.add_parser("lindley", help="reflected walk exceedance statistics")
    _add_mc(p, paths=1000)
    p.add_argument("--steps", type=_positive_int, required=True)
    p.add_argument("--u", default="1,2,4")
    _add_out(p)

    p = sub.add_parser("goldie", help="E[(XY'+1)^alpha - (XY')^alpha]")
    _add_mc(p)
    p.add_argument("--burn-in", type=_positive_int, default=1000)
    _add_out(p)

    p = sub.add_parser("mv-alpha", help="alpha and m(alpha) for a matrix ensemble")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--depth", type=_positive_int, default=30)
    p.add_argument("--samples", type=_positive_int, default=20_000)
    p.add_argument("--bracket", default="0.05,5")
    p.add_argument("--method", choices=("ratio", "power"), default="ratio")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--workers", type=_positive_int, default=None)
    _add_out(p)

    p = sub.add_parser("mv-tail", help="directional tail estimates for a matrix ensemble")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--u", required=True)
    p.add_argument("--v", required=True)
    p.add_argument("--logx", default="2,4,6")
    p.add_argument("--paths", type=_positive_int, default=100_000)
    p.add_argument("--depth", type=_positive_int, default=30)
    p.add_argument("--samples", type=_positive_int, default=20_000, help="samples for the alpha solve")
    p.add_argument("--bracket", default="0.05,5")
    p.add_argument("--n-max", type=_positive_int, default=None)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--workers", type=_positive_int, default=None)
    _add_out(p, ("json", "csv"))

    p = sub.add_parser("fig2a", help="two ratio panels for loggamma factors")
    p.add_argument("--gamma", type=float, default=4.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--mu", type=float, default=5.0)
    p.add_argument("--logx-min", type=float, default=20.0)
    p.add_argument("--logx-max", type=float, default=100.0)
    p.add_argument("--per-decade", type=_positive_int, default=50)
    p.add_argument("--out", required=True, help="SVG output path")
    p.add_argument("--csv", help="also write the curve as CSV")
    return parser


# --- commands -------------------------------------------------------------------


def _model(path):
    desc = _load_json(path, "model")
    return desc, model_from_dict(desc)


def _cfg(args, truncation=None):
    workers = args.workers if args.workers is not None else default_workers()
    kw = {} if truncation is None else {"truncation": truncation}
    return SimulationConfig(n_paths=args.paths, seed=args.seed, workers=workers, **kw)


def _mc_result(est, cfg, extra=None):
    out = est.to_dict()
    out["config_echo"] = cfg.to_dict()
    if extra:
        out.update(extra)
    return out


def cmd_alpha(args):
    desc, model = _model(args.model)
    sol = solve_alpha(model)
    result = sol.to_dict()
    result["conditions"] = check_conditions(model, sol).to_dict()
    spec = ExperimentSpec("alpha", desc)
    return spec, result, f"alpha={sol.alpha:.12g} m_alpha={sol.m_alpha:.12g} sigma2_alpha={sol.sigma2_alpha:.12g}"


def cmd_tail(args):
    desc, model = _model(args.model)
    cols = [c.strip() for c in args.columns.split(",") if c.strip()]
    bad = set(cols) - set(COLUMNS)
    if bad:
        raise ValidationError(f"unknown column(s) {sorted(bad)}; choose from {','.join(COLUMNS)}")
    sol = solve_alpha(model)
    grid = log_grid(args.logx_min, args.logx_max, args.per_decade)
    curve = tail_curve(model, sol, grid, cols)
    rows = _curve_rows(curve)
    spec = ExperimentSpec("tail", desc, {"logx_min": args.logx_min, "logx_max": args.logx_max,
                                         "per_decade": args.per_decade, "columns": cols},
                          {"out": args.out, "plot": args.plot})
    if args.plot:
        atomic_write(args.plot, emit_plot(curve))
    return spec, {"rows": rows, "columns": list(TAIL_CSV_COLUMNS)}, f"{len(rows)} grid points, alpha={sol.alpha:.6g}"


def _curve_rows(curve):
    rows = []
    for i, lx in enumerate(curve.log_x):
        row = {"log_x": float(lx), "leading": float(curve.leading[i])}
        if curve.normal_approx is not None:
            row["normal_approx"] = float(curve.normal_approx[i])
            row["ratio_normal"] = float(curve.ratio_normal[i])
        if curve.tilted_exact is not None:
            row["tilted_exact"] = float(curve.tilted_exact[i])
            row["ratio_tilted"] = float(curve.ratio_tilted[i])
        rows.append(row)
    return rows


def cmd_simulate_y(args):
    desc, model = _model(args.model)
    if args.truncation == "adaptive":
        trunc = Adaptive(tolerance=args.tolerance)
    else:
        try:
            trunc = int(args.truncation)
        except ValueError:
            raise ValidationError("--truncation must be 'adaptive' or an integer") from None
    cfg = _cfg(args, trunc)
    ys = simulate_Y(model, cfg)
    upper = ys.tail(log_x=args.logx)
    lower = ys.tail(log_x=args.logx, side="lower")
    spec = ExperimentSpec("simulate-y", desc, {"logx": args.logx, **cfg.to_dict()}, {"out": args.out}, args.seed)
    result = _mc_result(upper, cfg, {"n_rows": ys.n_rows, "lower_tail": lower.to_dict()})
    return spec, result, f"P(Y > e^{args.logx:g}) = {upper.value:.6g} +- {upper.std_error:.2g}"


def cmd_is_tail(args):
    desc, model = _model(args.model)
    sol = solve_alpha(model)
    cfg = _cfg(args)
    if args.n is not None:
        est = is_tail_pn(model, sol, args.n, log_x=args.logx, n_samples=args.paths, seed=args.seed,
                         workers=cfg.workers)
    else:
        est = is_tail_p(model, sol, log_x=args.logx, n_samples_per_n=args.paths, seed=args.seed,
                        workers=cfg.workers, n_max=args.n_max, allocation=args.allocation)
    params = {"logx": args.logx, "n": args.n, "n_max": args.n_max, "allocation": args.allocation, **cfg.to_dict()}
    spec = ExperimentSpec("is-tail", desc, params, {"out": args.out, "per_n_csv": args.per_n_csv}, args.seed)
    if args.per_n_csv and est.per_n_breakdown:
        rows = [{"n": n, "value": v, "std_error": se} for n, (v, se) in sorted(est.per_n_breakdown.items())]
        atomic_write(args.per_n_csv, to_csv(PER_N_CSV_COLUMNS, rows, spec))
    return spec, _mc_result(est, cfg), f"p(e^{args.logx:g}) = {est.value:.6g} +- {est.std_error:.2g}"


def cmd_ruin(args):
    desc, model = _model(args.model)
    cfg = _cfg(args)
    try:
        sol = solve_alpha(model)
    except PerpetuityError:
        if not model.is_degenerate:
            raise
        sol = None
    est = simulate_ruin(model, sol, log_x=args.logx, cfg=cfg, modulus=args.modulus)
    scaled = None if sol is None else est.value * math.exp(sol.alpha * args.logx)
    spec = ExperimentSpec("ruin", desc, {"logx": args.logx, "modulus": args.modulus, **cfg.to_dict()},
                          {"out": args.out}, args.seed)
    return spec, _mc_result(est, cfg, {"x_alpha_times_value": scaled}), \
        f"P(max Pi' > e^{args.logx:g}) = {est.value:.6g} +- {est.std_error:.2g}"


def cmd_lindley(args):
    desc, model = _model(args.model)
    cfg = _cfg(args)
    u = _floats(args.u, "u")
    stats_ = simulate_lindley(model, args.steps, cfg, u)
    spec = ExperimentSpec("lindley", desc, {"steps": args.steps, "u": u, **cfg.to_dict()}, {"out": args.out},
                          args.seed)
    result = stats_.to_dict()
    result["config_echo"] = cfg.to_dict()
    return spec, result, f"mean zero hits {stats_.mean_zero_hits:.6g} over {args.steps} steps"


def cmd_goldie(args):
    desc, model = _model(args.model)
    sol = solve_alpha(model)
    cfg = _cfg(args)
    est = goldie_constant(model, sol, cfg, burn_in=args.burn_in)
    spec = ExperimentSpec("goldie", desc, {"burn_in": args.burn_in, **cfg.to_dict()}, {"out": args.out}, args.seed)
    return spec, _mc_result(est, cfg, {"alpha": sol.alpha}), f"goldie constant {est.value:.6g} +- {est.std_error:.2g}"


def _bracket(text):
    vals = _floats(text, "bracket")
    if len(vals) != 2:
        raise ValidationError("--bracket needs two numbers lo,hi")
    return tuple(vals)


def cmd_mv_alpha(args):
    desc = _load_json(args.ensemble, "ensemble")
    ens = ensemble_from_dict(desc)
    workers = args.workers if args.workers is not None else default_workers()
    gamma, gamma_se, gamma_depth = estimate_lyapunov(ens, args.depth, args.samples, seed=args.seed, workers=workers)
    mv = solve_alpha_mv(ens, args.depth, args.samples, _bracket(args.bracket), seed=args.seed, workers=workers,
                        method=args.method)
    params = {"depth": args.depth, "samples": args.samples, "bracket": list(_bracket(args.bracket)),
              "method": args.method, "workers": workers}
    spec = ExperimentSpec("mv-alpha", desc, params, {"out": args.out}, args.seed)
    result = mv.to_dict()
    result.update({"lyapunov": gamma, "lyapunov_se": gamma_se, "lyapunov_depth": gamma_depth})
    return spec, result, f"alpha={mv.alpha:.6g} +- {mv.alpha_se:.2g}, m={mv.m_alpha:.6g}"


def cmd_mv_tail(args):
    desc = _load_json(args.ensemble, "ensemble")
    ens = ensemble_from_dict(desc)
    workers = args.workers if args.workers is not None else default_workers()
    u, v = np.array(_floats(args.u, "u")), np.array(_floats(args.v, "v"))
    lx = _floats(args.logx, "logx")
    mv = solve_alpha_mv(ens, args.depth, args.samples, _bracket(args.bracket), seed=args.seed, workers=workers)
    cfg = SimulationConfig(n_paths=args.paths, seed=args.seed, workers=workers)
    est = mv_tail_estimates(ens, mv, u, v, lx, cfg, n_max=args.n_max)
    params = {"u": u.tolist(), "v": v.tolist(), "logx": lx, "depth": args.depth, "samples": args.samples,
              "bracket": list(_bracket(args.bracket)), "n_max": est.n_max, **cfg.to_dict()}
    spec = ExperimentSpec("mv-tail", desc, params, {"out": args.out}, args.seed)
    result = {"alpha": mv.alpha, "alpha_se": mv.alpha_se, "m_alpha": mv.m_alpha,
              "target_ratio": est.target_ratio, "rows": est.to_rows()}
    return spec, result, f"{len(lx)} x values, target ratio {est.target_ratio:.4g}"


def cmd_fig2a(args):
    model = LogGamma(args.gamma, args.beta, args.mu)
    sol = solve_alpha(model)
    grid = log_grid(args.logx_min, args.logx_max, args.per_decade)
    curve = tail_curve(model, sol, grid, ("leading", "normal", "tilted"))
    svg = emit_plot(curve)
    atomic_write(args.out, svg)
    spec = ExperimentSpec("fig2a", model.to_dict(), {"logx_min": args.logx_min, "logx_max": args.logx_max,
                                                     "per_decade": args.per_decade},
                          {"out": args.out, "csv": args.csv})
    rows = _curve_rows(curve)
    if args.csv:
        atomic_write(args.csv, to_csv(TAIL_CSV_COLUMNS, rows, spec))
    last = rows[-1]
    return spec, None, (f"wrote {args.out}: {len(rows)} points, at log x={last['log_x']:.4g} "
                        f"normal ratio {last['ratio_normal']:.4g}, tilted ratio {last['ratio_tilted']:.4g}")


COMMANDS = {
    "alpha": cmd_alpha,
    "tail": cmd_tail,
    "simulate-y": cmd_simulate_y,
    "is-tail": cmd_is_tail,
    "ruin": cmd_ruin,
    "lindley": cmd_lindley,
    "goldie": cmd_goldie,
    "mv-alpha": cmd_mv_alpha,
    "mv-tail": cmd_mv_tail,
    "fig2a": cmd_fig2a,
}


def _emit(args, spec, result, summary):
    if result is None:
        print(summary)
        return
    fmt = getattr(args, "format", "json")
    if fmt == "csv":
        if args.command == "tail":
            text = to_csv(TAIL_CSV_COLUMNS, result["rows"], spec)
        else:
            text = to_csv(MV_TAIL_CSV_COLUMNS, result["rows"], spec)
    else:
        text = to_json(spec, result)
    if args.out:
        atomic_write(args.out, text)
        print(f"wrote {args.out}: {summary}")
    else:
        sys.stdout.write(text)


def _fail(kind: str, exc: Exception, code: int) -> int:
    err = {"error": kind, "type": type(exc).__name__, "message": str(exc)}
    for attr in ("bound", "feasible_log_x_max"):
        if getattr(exc, attr, None) is not None:
            err[attr] = _jsonable(getattr(exc, attr))
    sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
    return code


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        spec, result, summary = COMMANDS[args.command](args)
        _emit(args, spec, result, summary)
    except ValidationError as exc:
        return _fail("validation", exc, 2)
    except (PerpetuityError, ArithmeticError, FloatingPointError) as exc:
        return _fail("numerical", exc, 3)
    return 0


def main():  # pragma: no cover - thin wrapper
    sys.exit(run())


if __name__ == "__main__":  # pragma: no cover
    main()
