"""Command-line interface: ``episwitch <command> --config MODEL.json [options]``.

Every command that writes files with ``--out`` also writes a manifest
(config digest, seed, version, parameters) next to them.  Outputs depend
only on the manifest contents, so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .chain import ChainState, floor_state, monte_carlo_extinction, simulate_chain
from .config import file_digest, load_model
from .errors import DomainError, ModelError, NumericalError, SizeError
from .lyapunov import (
    DEFAULT_HORIZONS,
    DEFAULT_P_MAX,
    MonteCarloParams,
    ThresholdResult,
    estimate_lambda,
    estimate_pstar,
    estimate_pstar_lower,
    exact_available,
    g_curve,
)
from .model import ModelSpec, group_sizes, validate_model
from .pdmp import simulate_angular, simulate_pdmp
from .qsd import DEFAULT_MAX_ITER, DEFAULT_TOL, compute_qsd, transfer_weights, enumerate_states
from .rng import ALGORITHM, RngStream, derive_seed
from .spectral import lambda_exact_1d

EXIT_OK, EXIT_USAGE, EXIT_MODEL, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- output plumbing ----------------------------------------------------------------


class Outputs:
    """Resolves ``--out``: a path with a ``.csv``/``.json`` suffix names the main result file;
    any other path is a directory that receives default file names.  Without ``--out``
    results go to standard output and no manifest is written.
    """

    def __init__(self, out, default_name):
        self.written = []
        if out is None:
            self.main = None
            return
        out = Path(out)
        if out.suffix in (".csv", ".json"):
            out.parent.mkdir(parents=True, exist_ok=True)
            self.main = out
            self.stem = out.with_suffix("")
        else:
            out.mkdir(parents=True, exist_ok=True)
            self.main = out / default_name
            self.stem = out / Path(default_name).stem

    @property
    def enabled(self):
        return self.main is not None

    def sibling(self, suffix):
        """``<stem>.<suffix>``, e.g. ``q.summary.json`` next to ``q.csv``."""
        return Path(f"{self.stem}.{suffix}")

    def record(self, path):
        self.written.append(Path(path).name)
        return path


def _json_text(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _write_json(path, obj):
    Path(path).write_text(_json_text(obj))


def _write_rows(path_or_none, header, rows):
    fh = open(path_or_none, "w", newline="") if path_or_none else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if path_or_none:
            fh.close()


def _num(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return int(v)
    return repr(float(v))


def _manifest(args, outputs: Outputs):
    if not outputs.enabled:
        return
    params = {k: v for k, v in sorted(vars(args).items())
              if k not in ("func", "out", "config", "seed", "figures")}
    doc = {
        "command": args.command,
        "config": str(args.config) if getattr(args, "config", None) else None,
        "config_sha256": file_digest(args.config) if getattr(args, "config", None) else None,
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "rng": ALGORITHM,
        "parameters": params,
        "outputs": sorted(outputs.written),
    }
    _write_json(outputs.sibling("manifest.json"), doc)


def _figure(args, outputs, fn, *data):
    if not getattr(args, "figures", False):
        return
    if not outputs.enabled:
        raise UsageError("--figures needs --out")
    from . import plotting

    path = outputs.record(outputs.sibling("png"))
    getattr(plotting, fn)(*data, path)


def _stream(args, label):
    return RngStream(derive_seed(args.seed, label), 0)


def _sizes(spec, K, sizes=None):
    if sizes is not None:
        sizes = np.asarray(sizes, dtype=np.int64)
        if sizes.sum() != K:
            raise DomainError(f"--sizes {sizes.tolist()} do not sum to K={K}")
        return sizes
    return group_sizes(K, spec.group_fractions)


def _vector(values, d, name):
    if values is None:
        return None
    if len(values) == 1:
        values = values * d
    if len(values) != d:
        raise DomainError(f"{name} needs 1 or {d} values")
    return np.asarray(values, dtype=float)


def _env(spec, env1):
    if not 1 <= env1 <= spec.num_env:
        raise DomainError(f"--env0 must be in 1..{spec.num_env}")
    return env1 - 1


# -- scaling study ------------------------------------------------------------------


@dataclass
class ScalingRow:
    K: int
    lam: float | None = None
    residual: float | None = None
    iters: int | None = None
    mean_tau: float | None = None
    se_tau: float | None = None
    n_rep: int = 0
    truncated: int = 0
    status: str = "ok"

    HEADER = ["K", "lambda", "residual", "iters", "mean_tau", "se_tau", "n_rep", "truncated", "status"]

    def cells(self):
        return [self.K, _num(self.lam), _num(self.residual), _num(self.iters), _num(self.mean_tau),
                _num(self.se_tau), self.n_rep, self.truncated, self.status]


def _fit(x, y):
    res = stats.linregress(x, y)
    half = stats.t.ppf(0.975, len(x) - 2) * res.stderr if len(x) > 2 else math.nan
    return {"slope": float(res.slope), "intercept": float(res.intercept),
            "ci95": [float(res.slope - half), float(res.slope + half)], "points": len(x)}


def _regime(spec, seed):
    if exact_available(spec):
        lam = lambda_exact_1d(spec)
        return ("persistent" if lam > 0 else "non-persistent"), lam
    est = estimate_lambda(spec, rng=RngStream(derive_seed(seed, "scaling/lambda"), 0))
    if abs(est.value) <= 2 * est.half_width:
        return "critical", est.value
    return ("persistent" if est.value > 0 else "non-persistent"), est.value


def run_scaling_study(spec: ModelSpec, Ks, n_rep=0, seed=0, exact=True, x0=0.5, env0=0,
                      tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, max_events=10**9, regime="auto"):
    """Exact extinction rates and optional Monte Carlo mean extinction times along a ``K`` ladder.

    Returns ``(rows, summary)``.  Errors for one ``K`` (state-space cap,
    non-convergence, all replicates truncated) are recorded in its row and
    the study continues.
    """
    Ks = sorted(int(k) for k in Ks)
    if not Ks:
        raise UsageError("empty K ladder")
    if regime == "auto":
        regime, lyap = _regime(spec, seed)
    else:
        lyap = None
    rows, prev = [], None
    for K in Ks:
        row = ScalingRow(K)
        sizes = _sizes(spec, K)
        notes = []
        if exact:
            try:
                init = None if prev is None else transfer_weights(prev, enumerate_states(spec, K, sizes))
                res = compute_qsd(spec, K, sizes, tol, max_iter, init=init)
                row.lam, row.residual, row.iters = res.rate, res.residual, res.iterations
                prev = res
                if not res.converged:
                    notes.append("qsd-unconverged")
            except SizeError as exc:
                notes.append(f"state-space-cap:{exc.size}")
        if n_rep:
            counts = np.minimum(floor_state(np.full(spec.d, x0), sizes), sizes)
            if not counts.any():
                counts[0] = 1
            try:
                mc = monte_carlo_extinction(spec, K, sizes, ChainState(counts, env0), n_rep,
                                            derive_seed(seed, f"scaling/{K}"), max_events)
                row.mean_tau, row.se_tau, row.truncated = mc.mean, mc.se, mc.truncated
                row.n_rep = n_rep
            except NumericalError:
                notes.append("all-truncated")
                row.n_rep, row.truncated = n_rep, n_rep
        row.status = ";".join(notes) or "ok"
        rows.append(row)

    summary = {"regime": regime, "lyapunov_exponent": lyap, "K": Ks}
    lam = [(r.K, r.lam) for r in rows if r.lam is not None and r.lam > 0 and r.status == "ok"]
    if len(lam) >= 2:
        k, v = np.array(lam).T
        summary["exact_fit"] = {"model": "-log(lambda) = a + slope * log(K)", **_fit(np.log(k), -np.log(v))}
    tau = [(r.K, r.mean_tau) for r in rows if r.mean_tau is not None]
    if len(tau) >= 2:
        k, t = np.array(tau).T
        if regime == "non-persistent":
            ratio = t / np.log(k)
            summary["mc_fit"] = {
                "model": "mean_tau = coefficient * log(K)",
                "coefficient": float((t @ np.log(k)) / (np.log(k) @ np.log(k))),
                "ratio_to_logK": ratio.tolist(),
                "ratio_spread": float(ratio.max() / ratio.min()),
            }
        else:
            summary["mc_fit"] = {"model": "log(mean_tau) = a + slope * log(K)", **_fit(np.log(k), np.log(t))}
    return rows, summary


# -- commands -----------------------------------------------------------------------


def cmd_validate(args, spec):
    report = validate_model(spec, args.grid)
    print(report)
    return EXIT_OK if report.passed else EXIT_MODEL


def cmd_chain(args, spec):
    sizes = _sizes(spec, args.K, args.sizes)
    if args.n0 is not None:
        counts = np.asarray(_vector(args.n0, spec.d, "--n0"), dtype=np.int64)
    else:
        counts = floor_state(_vector(args.x0, spec.d, "--x0"), sizes)
    init = ChainState(counts, _env(spec, args.env0))
    if args.n_rep:
        return _chain_replicates(args, spec, sizes, init)
    path = simulate_chain(spec, args.K, sizes, init, args.horizon,
                          rng=_stream(args, "chain"), max_events=args.max_events)
    out = Outputs(args.out, "chain.csv")
    summary = {"terminal": path.terminal, "extinction_time": path.extinction_time, "events": path.n_events,
               "final_time": path.final.time}
    if out.enabled:
        path.to_csv(out.record(out.main))
        _write_json(out.record(out.sibling("summary.json")), summary)
        _figure(args, out, "chain_figure", path)
        _manifest(args, out)
    print(_json_text(summary), end="")
    return EXIT_OK


def _chain_replicates(args, spec, sizes, init):
    summary = monte_carlo_extinction(spec, args.K, sizes, init, args.n_rep, derive_seed(args.seed, "chain/mc"),
                                     args.max_events)
    row = [_num(v) for v in summary.row()]
    out = Outputs(args.out, "extinction.csv")
    if out.enabled:
        _write_rows(out.record(out.main), summary.HEADER, [row])
        _manifest(args, out)
    else:
        _write_rows(None, summary.HEADER, [row])
    return EXIT_OK


def cmd_pdmp(args, spec):
    if args.angular:
        return _angular(args, spec)
    x0 = _vector(args.x0, spec.d, "--x0")
    path = simulate_pdmp(spec, x0, _env(spec, args.env0), args.T, args.dt, _stream(args, "pdmp"), args.h_max)
    out = Outputs(args.out, "pdmp.csv")
    if out.enabled:
        path.to_csv(out.record(out.main))
        _figure(args, out, "pdmp_figure", path)
        _manifest(args, out)
    else:
        path.to_csv(sys.stdout)
    return EXIT_OK


def _angular(args, spec):
    theta0 = _vector(args.theta0, spec.d, "--theta0") if args.theta0 else np.full(spec.d, 1.0 / spec.d)
    path = simulate_angular(spec, theta0 / theta0.sum(), _env(spec, args.env0), args.T, args.dt,
                            _stream(args, "angular"), args.h_max)
    out = Outputs(args.out, "angular.csv")
    if out.enabled:
        path.to_csv(out.record(out.main))
        _manifest(args, out)
    else:
        path.to_csv(sys.stdout)
    return EXIT_OK


def cmd_lambda(args, spec):
    est = estimate_lambda(spec, args.T, args.burn_in, args.batches, _stream(args, "lambda"), args.h_max)
    doc = {"estimate": est.value, "half_width": est.half_width, "ci95": list(est.interval), "T": est.T,
           "burn_in": est.burn_in, "n_batches": len(est.batch_means)}
    if exact_available(spec):
        doc["exact"] = lambda_exact_1d(spec)
    out = Outputs(args.out, "lambda.json")
    if out.enabled:
        _write_json(out.record(out.main), doc)
        _manifest(args, out)
    print(_json_text(doc), end="")
    return EXIT_OK


def _p_grid(args):
    if args.p is not None:
        return np.asarray(args.p, dtype=float)
    lo, hi, step = args.p_range
    if step <= 0 or hi < lo:
        raise DomainError("--p-range needs MIN <= MAX and STEP > 0")
    n = int(math.floor((hi - lo) / step + 1e-9))
    return np.round(lo + step * np.arange(n + 1), 12)


def _mc_params(args):
    return MonteCarloParams(horizons=tuple(args.horizons), n_rep=args.n_rep, n_boot=args.n_boot,
                            seed=derive_seed(args.seed, args.command))


def threshold_from_curve(curve, sign) -> ThresholdResult:
    """First sign change of ``g(sign * p)``, ``p > 0``, along a g-curve grid (linear interpolation)."""
    p = curve.p
    sel = p * sign > 0
    q, g = np.abs(p[sel]), curve.g[sel]
    order = np.argsort(q)
    q, g = q[order], g[order]
    pos = np.flatnonzero(g > 0)
    if q.size == 0:
        return ThresholdResult("not-found-below-p_max", None, None, "g-curve-grid", "no grid points")
    if pos.size == 0:
        return ThresholdResult("not-found-below-p_max", None, None, "g-curve-grid",
                               f"g stays <= 0 up to |p| = {q[-1]:g}")
    k = pos[0]
    if k == 0:
        return ThresholdResult("finite", float(q[0]), (0.0, float(q[0])), "g-curve-grid", "positive at first point")
    q0, q1, g0, g1 = q[k - 1], q[k], g[k - 1], g[k]
    root = q0 + (q1 - q0) * (-g0) / (g1 - g0) if g1 != g0 else q1
    return ThresholdResult("finite", float(root), (float(q0), float(q1)), "g-curve-grid")


def cmd_gcurve(args, spec):
    ps = _p_grid(args)
    mc = _mc_params(args)
    curve = g_curve(spec, ps, args.method, mc.horizons, mc.n_rep, RngStream(mc.seed, 2), n_boot=mc.n_boot)
    rows = [(_num(p), _num(g), _num(s), m) for p, g, s, m in curve.rows()]
    if curve.method == "exact-1d":
        thr = {"pstar": estimate_pstar(spec, tol=args.tol).to_json(),
               "pstar_lower": estimate_pstar_lower(spec, tol=args.tol).to_json()}
    else:
        thr = {"pstar": threshold_from_curve(curve, -1).to_json(),
               "pstar_lower": threshold_from_curve(curve, 1).to_json()}
    out = Outputs(args.out, "gcurve.csv")
    if out.enabled:
        _write_rows(out.record(out.main), ["p", "g", "se", "method"], rows)
        _write_json(out.record(out.sibling("pstar.json")), thr)
        _figure(args, out, "gcurve_figure", curve)
        _manifest(args, out)
    else:
        _write_rows(None, ["p", "g", "se", "method"], rows)
    return EXIT_OK


def cmd_pstar(args, spec):
    fn = estimate_pstar_lower if args.lower else estimate_pstar
    res = fn(spec, args.p_max, args.tol, _mc_params(args))
    doc = res.to_json()
    out = Outputs(args.out, "pstar.json")
    if out.enabled:
        _write_json(out.record(out.main), doc)
        _manifest(args, out)
    print(_json_text(doc), end="")
    return EXIT_OK


def cmd_qsd(args, spec):
    sizes = _sizes(spec, args.K, args.sizes)
    res = compute_qsd(spec, args.K, sizes, args.tol, args.max_iter)
    summary = {"K": args.K, "sizes": sizes.tolist(), "lambda": res.rate, "mean_extinction_time": 1.0 / res.rate,
               "residual": res.residual, "iterations": res.iterations, "converged": res.converged,
               "states": int(res.weights.size)}
    out = Outputs(args.out, "qsd.csv")
    if out.enabled:
        res.to_csv(out.record(out.main))
        _write_json(out.record(out.sibling("summary.json")), summary)
        _figure(args, out, "qsd_figure", res)
        _manifest(args, out)
    print(_json_text(summary), end="")
    return EXIT_OK if res.converged else EXIT_NUMERICAL


def cmd_scaling(args, spec):
    rows, summary = run_scaling_study(spec, args.K, args.n_rep, args.seed, not args.no_exact, args.x0,
                                      _env(spec, args.env0), args.tol, args.max_iter, args.max_events,
                                      args.regime)
    out = Outputs(args.out, "scaling.csv")
    cells = [r.cells() for r in rows]
    if out.enabled:
        _write_rows(out.record(out.main), ScalingRow.HEADER, cells)
        _write_json(out.record(out.sibling("summary.json")), summary)
        _figure(args, out, "scaling_figure", [r.K for r in rows],
                [math.nan if r.lam is None else r.lam for r in rows],
                [math.nan if r.mean_tau is None else r.mean_tau for r in rows])
        _manifest(args, out)
    else:
        _write_rows(None, ScalingRow.HEADER, cells)
    print(_json_text(summary), end="", file=sys.stderr if not out.enabled else sys.stdout)
    return EXIT_OK


# -- parser -------------------------------------------------------------------------


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", required=True, help="model JSON file")
    common.add_argument("--seed", type=int, default=0, help="base seed (unsigned 64-bit)")
    common.add_argument("--out", help="result file (.csv/.json) or directory; manifest written alongside")
    common.add_argument("--figures", action="store_true", help="also render PNG figures next to the results")

    mc = _Parser(add_help=False)
    mc.add_argument("--n-rep", type=int, default=2000)
    mc.add_argument("--n-boot", type=int, default=200)
    mc.add_argument("--horizons", type=float, nargs="+", default=list(DEFAULT_HORIZONS))

    parser = _Parser(prog="episwitch", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", parents=[common], help="check the standing assumptions")
    p.add_argument("--grid", type=int, default=21, help="probe points per axis")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("chain", parents=[common], help="simulate the finite-population chain")
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--sizes", type=int, nargs="+")
    p.add_argument("--x0", type=float, nargs="+", default=[0.5], help="initial fractions (floored)")
    p.add_argument("--n0", type=int, nargs="+", help="initial counts (overrides --x0)")
    p.add_argument("--env0", type=int, default=1, help="initial environment, 1-based")
    p.add_argument("--horizon", type=float)
    p.add_argument("--max-events", type=int, default=10**9)
    p.add_argument("--n-rep", type=int, default=0,
                   help="run this many replicates to extinction and write the summary CSV instead of a path")
    p.set_defaults(func=cmd_chain)

    p = sub.add_parser("pdmp", parents=[common], help="simulate the switched ODE")
    p.add_argument("--x0", type=float, nargs="+", default=[0.5])
    p.add_argument("--env0", type=int, default=1)
    p.add_argument("--T", type=float, default=100.0)
    p.add_argument("--dt", type=float, default=0.1)
    p.add_argument("--h-max", type=float, default=0.05)
    p.add_argument("--angular", action="store_true", help="simulate the angular process of the linearisation")
    p.add_argument("--theta0", type=float, nargs="+", help="initial direction for --angular (normalised)")
    p.set_defaults(func=cmd_pdmp)

    p = sub.add_parser("lambda", parents=[common], help="estimate the Lyapunov exponent")
    p.add_argument("--T", type=float, default=1e5)
    p.add_argument("--burn-in", type=float, default=100.0)
    p.add_argument("--batches", type=int, default=20)
    p.add_argument("--h-max", type=float, default=0.05)
    p.set_defaults(func=cmd_lambda)

    p = sub.add_parser("gcurve", parents=[common, mc], help="moment exponent on a p grid")
    grid = p.add_mutually_exclusive_group()
    grid.add_argument("--p", type=float, nargs="+")
    grid.add_argument("--p-range", type=float, nargs=3, metavar=("MIN", "MAX", "STEP"), default=[-2.0, 2.0, 0.25])
    p.add_argument("--method", choices=["auto", "exact-1d", "monte-carlo"], default="auto")
    p.add_argument("--tol", type=float, default=1e-6, help="bisection tolerance for the threshold exponents")
    p.set_defaults(func=cmd_gcurve)

    p = sub.add_parser("pstar", parents=[common, mc], help="threshold exponent p*")
    p.add_argument("--lower", action="store_true", help="compute inf{p > 0 : g(p) > 0} instead")
    p.add_argument("--p-max", type=float, default=DEFAULT_P_MAX)
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_pstar)

    p = sub.add_parser("qsd", parents=[common], help="quasi-stationary distribution and extinction rate")
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--sizes", type=int, nargs="+")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)
    p.set_defaults(func=cmd_qsd)

    p = sub.add_parser("scaling", parents=[common], help="extinction rates and times along a K ladder")
    p.add_argument("--K", type=int, nargs="+", required=True)
    p.add_argument("--n-rep", type=int, default=0, help="Monte Carlo replicates per K (0 = exact rates only)")
    p.add_argument("--no-exact", action="store_true", help="skip the QSD eigenproblem")
    p.add_argument("--x0", type=float, default=0.5, help="initial fraction in every group for Monte Carlo")
    p.add_argument("--env0", type=int, default=1)
    p.add_argument("--regime", choices=["auto", "persistent", "non-persistent"], default="auto")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)
    p.add_argument("--max-events", type=int, default=10**9)
    p.set_defaults(func=cmd_scaling)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        spec = load_model(args.config)
        return args.func(args, spec)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, SizeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ModelError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
