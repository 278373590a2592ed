"""Command-line entry point.

Exit codes: 0 all checks pass, 1 usage error, 2 numeric failure,
3 a verification check failed.
"""

import argparse
from pathlib import Path
import re
import sys

import numpy as np

from . import analysis, io, montecarlo as mc
from .exceptions import (ConfigurationError, ConvergenceError, DomainError,
                         InsufficientPointsError, OrbitDegenerateError, OrbitTrappedError,
                         ResolutionError, TailNotNegligibleError)
from .map_core import MapParams, compute_geometry, return_tail_exact
from .observables import OBSERVABLE_NAMES, make_observable
from .transfer import (asymptote_ratio, build_ulam, correlation_series, integrate,
                       invariant_density, make_grid, variance_constants)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_FAIL = 0, 1, 2, 3

NUMERIC_ERRORS = (ConvergenceError, OrbitTrappedError, OrbitDegenerateError, ResolutionError,
                  TailNotNegligibleError, InsufficientPointsError)

_INT = re.compile(r"^\+?\d+$")
_DEC = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)$")

RECORD_UNITS = {"n": "steps", "threshold": "sum", "trials": "count", "hits": "count",
                "p_hat": "probability", "ci_low": "probability", "ci_high": "probability"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def decimal_int(text):
    if not _INT.match(text):
        raise argparse.ArgumentTypeError(f"expected a decimal integer, got {text!r}")
    return int(text)


def decimal_float(text):
    if not _DEC.match(text):
        raise argparse.ArgumentTypeError(f"expected a decimal number, got {text!r}")
    return float(text)


def index_range(text):
    """``a``, ``a:b`` or ``a:b:step`` as an inclusive list of integers."""
    parts = text.split(":")
    if not 1 <= len(parts) <= 3 or not all(_INT.match(p) for p in parts):
        raise argparse.ArgumentTypeError(f"expected a:b:step with integers, got {text!r}")
    vals = [int(p) for p in parts]
    a, b, step = (vals + [vals[0], 1])[:3] if len(vals) == 1 else (vals + [1])[:3]
    if a < 1 or b < a or step < 1:
        raise argparse.ArgumentTypeError(f"need 1 <= a <= b and step >= 1, got {text!r}")
    return list(range(a, b + 1, step))


def _common(p, trials=1_000_000):
    p.add_argument("--gamma", type=decimal_float, default=0.5)
    p.add_argument("--seed", type=decimal_int, default=0)
    p.add_argument("--trials", type=decimal_int, default=trials)
    p.add_argument("--threads", type=decimal_int, default=1)
    p.add_argument("--cells", type=decimal_int, default=4096, help="Ulam grid size")
    p.add_argument("--out", default="stretchlab-out")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--quiet", action="store_true")


def _obs_flags(p, default="item-a", choices=OBSERVABLE_NAMES):
    p.add_argument("--obs", choices=choices, default=default)
    p.add_argument("--delta", type=decimal_float, default=1.0)
    p.add_argument("--epsilon", type=decimal_float, default=1e-6)


def build_parser():
    parser = _Parser(prog="stretchlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("geometry", help="preimage sequence y_n")
    _common(p)
    p.add_argument("--n-max", type=decimal_int, default=100)

    p = sub.add_parser("density", help="Ulam invariant density")
    _common(p)

    p = sub.add_parser("tails", help="exact and empirical return-time tails")
    _common(p)
    p.add_argument("--n-max", type=decimal_int, default=100)

    p = sub.add_parser("correlations", help="correlation series and variance constants")
    _common(p)
    _obs_flags(p)
    p.add_argument("--n-max", type=decimal_int, default=400)

    p = sub.add_parser("deviation", help="large-deviation grid and exponent check")
    _common(p)
    _obs_flags(p, choices=("item-a", "log-power", "truncated-log-power"))
    p.add_argument("--n", type=index_range, default=index_range("10:60:5"))
    p.add_argument("--burn-in", type=decimal_int, default=0)

    p = sub.add_parser("mdp", help="moderate-deviation trend table")
    _common(p)
    _obs_flags(p)
    p.add_argument("--n", type=index_range, default=index_range("10:100:10"))
    p.add_argument("--theta", type=decimal_float, default=0.2, help="a_n = n^-theta")
    p.add_argument("--x", type=decimal_float, default=1.0)

    p = sub.add_parser("concentration", help="running-max concentration profile")
    _common(p, trials=2_000_000)
    _obs_flags(p, choices=("item-a", "truncated-log-power", "identity"))
    p.add_argument("--n", type=index_range, default=[50])
    p.add_argument("--points", type=decimal_int, default=16)

    p = sub.add_parser("verify", help="run the acceptance suite")
    p.add_argument("--only", default=None, help="comma-separated criterion keys 1..9")
    p.add_argument("--scale", type=decimal_float, default=1.0,
                   help="multiplier on Monte Carlo trial counts")
    p.add_argument("--out", default="stretchlab-out")
    p.add_argument("--format", choices=("csv", "json"), default="json")
    p.add_argument("--quiet", action="store_true")
    return parser


# subcommands -----------------------------------------------------------------

def _model(args, params):
    op = build_ulam(params, make_grid(args.cells))
    return op, invariant_density(op)


def _observable(args, params, density):
    obs = make_observable(args.obs, params, delta=args.delta, epsilon=args.epsilon)
    return obs.with_mean(integrate(obs, density))


def _sim(args, params, density, **kw):
    sampling = "lebesgue" if params.is_doubling else "inverse-cdf"
    return mc.SimulationConfig(params, seed=args.seed, trials=args.trials, threads=args.threads,
                               density=density, sampling=sampling, **kw)


def _record_rows(records):
    return [r.as_row() for r in records]


def cmd_geometry(args, params):
    geo = compute_geometry(params, args.n_max)
    rows = [(n, float(geo.y[n]), float(geo.u[n])) for n in range(args.n_max + 1)]
    v1, v2 = geo.envelope()
    info = {"envelope_upper": v1, "envelope_lower": v2,
            "log_slope": geo.log_slope(n_min=min(20, args.n_max - 1))}
    table = ("geometry", ("n", "y_n", "u_n"), rows, {"n": "index", "y_n": "x", "u_n": "-log x"})
    return [table], info, None


def cmd_density(args, params):
    op, dens = _model(args, params)
    g = dens.grid
    rows = list(zip(g.left.tolist(), g.right.tolist(), dens.values.tolist()))
    info = {"iterations": dens.iterations, "asymptote_ratio": asymptote_ratio(dens, params.beta),
            "beta": params.beta, "n_cells": g.n_cells}
    table = ("density", ("cell_left", "cell_right", "density"), rows,
             {"cell_left": "x", "cell_right": "x", "density": "1/x"})
    return [table], info, None


def cmd_tails(args, params):
    if args.n_max < 2:
        raise UsageError("--n-max must be >= 2")
    geo = compute_geometry(params, args.n_max)
    records = mc.empirical_return_tail(_sim(args, params, None), args.n_max)
    rows = [(r.n, float(return_tail_exact(geo, r.n))) + r.as_row()[2:] for r in records]
    info = {}
    n = np.arange(10, args.n_max + 1)
    if n.size >= analysis.MIN_POINTS:
        info["exact_fit"] = analysis.fit_stretched_exponent(
            np.column_stack([n, return_tail_exact(geo, n)])).__dict__
    columns = ("n", "exact") + mc.RECORD_COLUMNS[2:]
    units = dict(RECORD_UNITS, n="steps", exact="probability")
    return [("tails", columns, rows, units)], info, None


def cmd_correlations(args, params):
    op, dens = _model(args, params)
    obs = _observable(args, params, dens)
    cov = correlation_series(op, dens, obs, args.n_max)
    rows = [(n, float(c)) for n, c in enumerate(cov)]
    info = {"nu_f": obs.nu_mean}
    try:
        vc = variance_constants(op, dens, obs)
        info.update(V=vc.V, sigma2=vc.sigma2, truncation_index=vc.truncation_index)
    except TailNotNegligibleError as exc:
        info["variance"] = str(exc)
    ratio = np.abs(cov) / cov[0]
    n = np.arange(cov.size)
    keep = (n >= 10) & (ratio > 1e-12) & (ratio < 1.0)
    if keep.sum() >= analysis.MIN_POINTS:
        info["decay_fit"] = analysis.fit_stretched_exponent(
            np.column_stack([n[keep], ratio[keep]])).__dict__
    return [("correlations", ("n", "cov"), rows, {"n": "steps", "cov": "f^2"})], info, None


def cmd_deviation(args, params):
    op, dens = _model(args, params)
    obs = _observable(args, params, dens)
    cfg = _sim(args, params, dens, burn_in=args.burn_in)
    if args.obs == "item-a":
        cells = [(n, n * obs.nu_mean / 2.0) for n in args.n]
    else:
        cells = [(n, float(n)) for n in args.n]
    records = mc.deviation_cells(cfg, obs, cells)
    if args.obs == "item-a":
        geo = compute_geometry(params, max(args.n) + 2)
        report = analysis.check_thm_opt_a(params, geo, records, dens, obs.nu_mean)
    else:
        geo = compute_geometry(params, 4 * max(args.n) + 100)
        report = analysis.check_thm_opt_b(params, geo, records, dens, obs.nu_mean,
                                          delta=args.delta)
    table = ("deviation", mc.RECORD_COLUMNS, _record_rows(records), RECORD_UNITS)
    return [table], {"nu_f": obs.nu_mean}, report


def cmd_mdp(args, params):
    op, dens = _model(args, params)
    obs = _observable(args, params, dens)
    sigma2 = variance_constants(op, dens, obs).sigma2
    records = mc.mdp_cells(_sim(args, params, dens), obs, args.n, args.theta, args.x)
    report = analysis.check_mdp(records, sigma2, args.x, args.theta)
    cols = ("n", "a_n", "threshold", "trials", "hits", "p_hat", "ci_low", "ci_high",
            "scaled_log_p", "target")
    rows = [tuple(row[c] for c in cols) for row in report.table]
    units = dict(RECORD_UNITS, a_n="1", scaled_log_p="1", target="1")
    return [("mdp", cols, rows, units)], {"sigma2": sigma2}, report


def cmd_concentration(args, params):
    if len(args.n) != 1:
        raise UsageError("concentration takes a single --n value")
    n = args.n[0]
    op, dens = _model(args, params)
    obs = _observable(args, params, dens)
    sample = mc.concentration_sample(_sim(args, params, dens), obs, n)
    records = [sample.record(t) for t in sample.t_grid(points=args.points)]
    rows = _record_rows(records)
    report = analysis.check_concentration(records, n, obs.lipschitz_constant, params.gamma)
    info = {"mean_K": sample.mean_K, "L": obs.lipschitz_constant}
    units = dict(RECORD_UNITS, threshold="sum")
    return [("concentration", mc.RECORD_COLUMNS, rows, units)], info, report


def cmd_verify(args):
    from .acceptance import CRITERIA, run_all

    keys = list(CRITERIA) if args.only is None else [k.strip() for k in args.only.split(",")]
    unknown = [k for k in keys if k not in CRITERIA]
    if unknown:
        raise UsageError(f"unknown criteria {unknown}; choose from {list(CRITERIA)}")
    results = run_all(keys, scale=args.scale, report=None if args.quiet else print)
    return [r.to_dict() for r in results], all(r.passed for r in results)


COMMANDS = {"geometry": cmd_geometry, "density": cmd_density, "tails": cmd_tails,
            "correlations": cmd_correlations, "deviation": cmd_deviation, "mdp": cmd_mdp,
            "concentration": cmd_concentration}


def _prepare_out(path):
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise UsageError(f"output directory {path!r} is not writable: {exc}") from exc
    return out


def run(args):
    out = _prepare_out(args.out)
    config = {k: v for k, v in vars(args).items() if k != "quiet"}
    manifest = io.RunManifest(subcommand=args.command, config=config)
    if args.command == "verify":
        results, ok = cmd_verify(args)
        io.write_json(out, "verify_report.json", results, manifest)
        manifest.finish()
        io.write_json(out, "verify_manifest.json", manifest.to_dict())
        return EXIT_OK if ok else EXIT_FAIL

    if args.threads < 1:
        raise UsageError("--threads must be >= 1")
    try:
        params = MapParams(args.gamma)
    except DomainError as exc:
        raise UsageError(str(exc)) from exc
    tables, info, report = COMMANDS[args.command](args, params)
    for stem, columns, rows, units in tables:
        io.write_table(out, stem, columns, rows, units, manifest, args.format)
    payload = {"info": info, "check": None if report is None else report.to_dict()}
    io.write_json(out, f"{args.command}_report.json", payload, manifest)
    manifest.finish()
    io.write_json(out, f"{args.command}_manifest.json", manifest.to_dict())
    if not args.quiet:
        for k, v in info.items():
            print(f"{k} = {v}")
        if report is not None:
            print(io.report_text(report))
        print(f"wrote {', '.join(manifest.outputs)}")
    return EXIT_OK if report is None or report.passed else EXIT_FAIL


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return run(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERIC_ERRORS as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
