"""``pdmplab`` command-line front end.

Exit codes: 0 success, 2 invalid input, 3 solver non-convergence,
4 insufficient data, 5 unsupported system.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from pdmplab import __version__
from pdmplab.core import HybridState, SwitchingParams
from pdmplab.gridfield import GridField

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NONCONVERGENCE = 3
EXIT_INSUFFICIENT = 4
EXIT_UNSUPPORTED = 5

PARAM_KEYS = ("alpha", "beta", "lambda0", "lambda1")


class CliError(Exception):
    def __init__(self, code: int, msg: str):
        super().__init__(msg)
        self.code = code


# ------------------------------------------------------------------ helpers

def _apply_threads() -> None:
    raw = os.environ.get("PDMPLAB_THREADS")
    if not raw:
        return
    try:
        n = int(raw)
    except ValueError:
        raise CliError(EXIT_VALIDATION, f"PDMPLAB_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise CliError(EXIT_VALIDATION, "PDMPLAB_THREADS must be at least 1")
    import numba

    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _resolve(args: argparse.Namespace, defaults: dict) -> argparse.Namespace:
    """Fill unset flags from ``--run-config`` and then from ``defaults``."""
    cfg = {}
    if getattr(args, "run_config", None):
        try:
            cfg = json.loads(Path(args.run_config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(EXIT_VALIDATION, f"cannot read run config: {exc}")
        if not isinstance(cfg, dict):
            raise CliError(EXIT_VALIDATION, "run config must be a JSON object")
        unknown = set(cfg) - set(vars(args))
        if unknown:
            raise CliError(EXIT_VALIDATION, f"unknown run config keys: {sorted(unknown)}")
    for key, val in vars(args).items():
        if val is None:
            if key in cfg:
                setattr(args, key, cfg[key])
            elif key in defaults:
                setattr(args, key, defaults[key])
    return args


def _params(args) -> SwitchingParams:
    missing = [k for k in PARAM_KEYS if getattr(args, k, None) is None]
    if missing:
        raise CliError(EXIT_VALIDATION, "missing required parameter(s): "
                       + ", ".join("--" + m for m in missing))
    try:
        return SwitchingParams(*(float(getattr(args, k)) for k in PARAM_KEYS))
    except ValueError as exc:
        raise CliError(EXIT_VALIDATION, str(exc))


def _provenance(args, extra: dict | None = None) -> dict:
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "chain", "_parsers")}
    out = {"tool": "pdmplab", "version": __version__, "command": args.command,
           "flags": json.dumps(flags, sort_keys=True, default=str)}
    if "seed" in flags:
        out["seed"] = flags["seed"]
    out.update(extra or {})
    return out


def _positive_int(name, v):
    try:
        iv = int(v)
    except (TypeError, ValueError):
        raise CliError(EXIT_VALIDATION, f"{name} must be an integer")
    if iv < 1 or iv != float(v):
        raise CliError(EXIT_VALIDATION, f"{name} must be a positive integer")
    return iv


def _emit_json(doc: dict, out: str | None) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True, default=_json_default)
    if out:
        Path(out).write_text(text + "\n")
    print(text)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o).__name__)


def _add_params(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model parameters")
    for k in PARAM_KEYS:
        g.add_argument(f"--{k}", type=float, default=None)
    p.add_argument("--run-config", default=None,
                   help="JSON object of flag values; explicit flags take precedence")


# ------------------------------------------------------------- subcommands

def cmd_simulate(args) -> int:
    from pdmplab.simulate import (default_burn_in, estimate_occupation, iter_simulation,
                                  regime_occupancy, write_event_csv)

    args = _resolve(args, {"events": 100_000, "seed": 0, "samples_per_interval": 4,
                           "grid": 256, "out": ".", "x1": 0.5, "x2": 0.5, "regime": 0})
    p = _params(args)
    n = _positive_int("--events", args.events)
    grid = _positive_int("--grid", args.grid)
    k = _positive_int("--samples-per-interval", args.samples_per_interval)
    burn = default_burn_in(p) if args.burn_in is None else float(args.burn_in)
    if burn < 0:
        raise CliError(EXIT_VALIDATION, "--burn-in must be nonnegative")
    if not (0 <= float(args.x1) <= 1 and 0 <= float(args.x2) <= 1):
        raise CliError(EXIT_VALIDATION, "initial point must lie in the unit square")
    try:
        init = HybridState((float(args.x1), float(args.x2)), int(args.regime))
    except ValueError as exc:
        raise CliError(EXIT_VALIDATION, str(exc))
    seed = int(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prov = _provenance(args, {"burn_in": burn})

    def pieces():
        return iter_simulation(p, init, n, seed)

    write_event_csv(pieces(), out / "events.csv", prov)
    occ = estimate_occupation(pieces(), grid=grid, samples_per_interval=k, burn_in=burn)
    occ.to_csv(out / "occupation.csv", prov)
    summary = {"regime0_fraction": None, "stderr": None, "expected": p.mass(0),
               "samples_outside_support": occ.meta["outside"], "post_burn_in_time": occ.meta["total_time"]}
    try:
        r = regime_occupancy(pieces(), burn)
        summary.update(regime0_fraction=r["fraction"], stderr=r["stderr"])
    except Exception as exc:  # occupancy needs enough intervals for batch means
        from pdmplab.simulate import InsufficientDataError

        if not isinstance(exc, InsufficientDataError):
            raise
        summary["note"] = str(exc)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_solve(args) -> int:
    from pdmplab.solver import ConvergenceError, SolverConfig, cdf_fixed_point, q2_fixed_point

    base = SolverConfig()
    if args.solver_config:
        try:
            base = SolverConfig.from_json(args.solver_config)
        except (OSError, TypeError, ValueError) as exc:
            raise CliError(EXIT_VALIDATION, f"bad solver config: {exc}")
    args = _resolve(args, {"grid": base.grid, "tol": base.tol, "max_iter": base.max_iter,
                           "method": "cdf", "out": "solution.csv"})
    p = _params(args)
    try:
        cfg = SolverConfig(grid=_positive_int("--grid", args.grid), tol=float(args.tol),
                           max_iter=_positive_int("--max-iter", args.max_iter),
                           nodes_per_unit_time=base.nodes_per_unit_time, gl_order=base.gl_order,
                           cutoff_eps=base.cutoff_eps)
    except ValueError as exc:
        raise CliError(EXIT_VALIDATION, str(exc))
    if args.method not in ("cdf", "q2"):
        raise CliError(EXIT_VALIDATION, "--method must be cdf or q2")
    try:
        field = cdf_fixed_point(p, cfg) if args.method == "cdf" else q2_fixed_point(p, cfg)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for k, r in enumerate(exc.history):
            print(f"iteration {k + 1} residual {r:.6e}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    for k, r in enumerate(field.meta["residuals"]):
        print(f"iteration {k + 1} residual {r:.6e}")
    if field.kind == "cdf" and not field.is_monotone():
        raise CliError(EXIT_NONCONVERGENCE, "solution CDF is not monotone; refusing to write")
    field.to_csv(args.out, _provenance(args, {"solver_config": json.dumps(cfg.to_json(), sort_keys=True),
                                              "iterations": len(field.meta["residuals"])}))
    return EXIT_OK


def cmd_classify(args) -> int:
    from pdmplab.analysis import classify_regime

    args = _resolve(args, {})
    p = _params(args)
    doc = classify_regime(p).to_json()
    doc["params"] = p.as_dict()
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


def _expected_exponent(p: SwitchingParams, kind: str):
    from pdmplab.analysis import classify_regime

    rep = classify_regime(p)
    if kind == "corner":
        flag = rep.origin_singular
        return (p.lambda0 if flag else p.alpha + p.beta) if flag is not None else None
    flag = rep.left_boundary_singular
    return (p.alpha + p.lambda1 if flag else p.alpha + p.beta) if flag is not None else None


def cmd_diagnose(args) -> int:
    from pdmplab import analysis
    from pdmplab.simulate import EventLog, default_burn_in, iter_simulation, marginal_cdf

    args = _resolve(args, {"events": 1_000_000, "seed": 0, "regime": 0, "t_anchor": 0.5,
                           "min_count": 100, "pairs": 10, "tolerance": None, "out": None})
    p = _params(args)
    seed = int(args.seed)
    burn = default_burn_in(p) if args.burn_in is None else float(args.burn_in)
    regime = int(args.regime)
    if regime not in (0, 1):
        raise CliError(EXIT_VALIDATION, "--regime must be 0 or 1")

    if args.log:
        try:
            log = EventLog.from_csv(args.log, p, seed)
        except (OSError, ValueError) as exc:
            raise CliError(EXIT_VALIDATION, f"cannot read event log: {exc}")
        source = lambda: log  # noqa: E731
    else:
        n = _positive_int("--events", args.events)
        source = lambda: iter_simulation(p, None, n, seed)  # noqa: E731

    doc: dict = {"kind": args.kind, "params": p.as_dict(), "provenance": _provenance(args)}
    if args.kind in ("corner", "strip"):
        eps = None if not args.eps_grid else [float(e) for e in args.eps_grid.split(",")]
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            if args.kind == "corner":
                fit = analysis.corner_mass_scaling(p, source(), eps, regime,
                                                   int(args.min_count), burn)
            else:
                fit = analysis.boundary_strip_scaling(p, source(), float(args.t_anchor), eps,
                                                      int(args.min_count), burn)
        doc["fit"] = fit.to_json()
        doc["warnings"] = [str(w.message) for w in caught]
        expected = _expected_exponent(p if regime == 0 else p.swapped(), args.kind)
        default_tol = 0.15 if args.kind == "corner" else 0.2
        tol = max(float(args.tolerance or default_tol), 3 * fit.slope_stderr)
        doc["expected_slope"] = expected
        doc["tolerance"] = tol
        if expected is None:
            verdict = f"slope {fit.slope:.4f} +/- {fit.slope_stderr:.4f}; open case, no reference exponent"
        else:
            ok = abs(fit.slope - expected) <= tol
            verdict = (f"slope {fit.slope:.4f} +/- {fit.slope_stderr:.4f} vs reference {expected:.4f}: "
                       + ("within" if ok else "outside") + f" tolerance {tol:.3f}")
    elif args.kind == "marginals":
        results = {}
        worst = 0.0
        for coord, name in ((0, "x1"), (1, "x2")):
            for r in (0, 1):
                d = analysis.ks_distance(lambda q: marginal_cdf(source(), coord, r, q, burn),
                                         analysis.beta_marginal_oracle(p, name, r))
                results[f"{name}_regime{r}"] = d
                worst = max(worst, d)
        doc["ks"] = results
        verdict = f"max KS distance {worst:.5f} (" + ("below" if worst < 0.005 else "above") + " 0.005)"
    else:
        rng = np.random.default_rng(seed)
        pairs = [(rng.uniform(0, 1, 2), rng.uniform(0, 1, 2))
                 for _ in range(_positive_int("--pairs", args.pairs))]
        n = _positive_int("--events", args.events)
        try:
            rows = analysis.wasserstein_decay_check(p, pairs, n, seed)
            doc["checked_events"] = int(rows.shape[0])
            doc["max_ratio_over_bound"] = float(np.max(rows[:, 2] / np.where(rows[:, 3] > 0, rows[:, 3], np.inf)))
            verdict = "contraction bound holds at every event"
        except AssertionError as exc:
            verdict = f"contraction bound violated: {exc}"
    doc["verdict"] = verdict
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")
    print(json.dumps({k: v for k, v in doc.items() if k != "provenance"}, sort_keys=True,
                     default=_json_default))
    print("verdict:", verdict)
    return EXIT_OK


def cmd_reduce(args) -> int:
    from pdmplab import reduction

    if bool(args.config) == bool(args.preset):
        raise CliError(EXIT_VALIDATION, "give exactly one of --config or --preset")
    try:
        if args.config:
            system = reduction.GeneralSystem.load(args.config)
        elif args.preset == "gene-expression":
            need = ("alpha_prod", "delta", "beta_prod", "gamma", "lambda0", "lambda1")
            missing = [k for k in need if getattr(args, k) is None]
            if missing:
                raise CliError(EXIT_VALIDATION, "gene-expression preset needs "
                               + ", ".join("--" + k.replace("_", "-") for k in missing))
            system = reduction.preset_gene_expression(args.alpha_prod, args.delta, args.beta_prod,
                                                      args.gamma, args.lambda0, args.lambda1,
                                                      args.xstar, args.ystar)
        else:
            need = ("k", "m", "lambda0", "lambda1")
            missing = [k for k in need if getattr(args, k) is None]
            if missing:
                raise CliError(EXIT_VALIDATION, "pde-modes preset needs "
                               + ", ".join("--" + k for k in missing))
            system = reduction.preset_pde_modes(args.k, args.m, args.lambda0, args.lambda1)
        conj = reduction.reduce(system)
    except reduction.UnsupportedSystemError as exc:
        print(f"error: unsupported system: {exc}", file=sys.stderr)
        return EXIT_UNSUPPORTED
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        raise CliError(EXIT_VALIDATION, f"bad system: {exc}")

    doc = {"system": system.to_json(), "conjugacy": conj.to_json(), "provenance": _provenance(args)}
    if args.verify:
        rng = np.random.default_rng(0)
        worst = 0.0
        fp = np.array([system.fixed_point(0), system.fixed_point(1)])
        lo, hi = fp.min(axis=0), fp.max(axis=0)
        for _ in range(1000):
            i = int(rng.integers(2))
            t = float(rng.uniform(0, 2.0 / conj.params.beta))
            x = lo + rng.uniform(size=2) * (hi - lo)
            worst = max(worst, reduction.conjugacy_residual(system, conj, i, t, x))
        doc["verify_max_residual"] = worst
        doc["verify_passed"] = worst <= 1e-9
    _emit_json(doc, args.out)
    if args.verify and not doc["verify_passed"]:
        print("error: conjugacy residual above 1e-9", file=sys.stderr)
        return EXIT_UNSUPPORTED
    if args.chain:
        q = conj.params
        chained = list(args.chain)
        for key in PARAM_KEYS:
            chained += [f"--{key}", repr(float(getattr(q, key)))]
        return main(chained)
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pdmplab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"pdmplab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    ap.set_defaults(_parsers={})

    s = sub.add_parser("simulate", help="simulate the switching process")
    _add_params(s)
    s.add_argument("--events", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--burn-in", type=float)
    s.add_argument("--samples-per-interval", type=int)
    s.add_argument("--grid", type=int)
    s.add_argument("--x1", type=float)
    s.add_argument("--x2", type=float)
    s.add_argument("--regime", type=int)
    s.add_argument("--out", help="output directory")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("solve", help="deterministic invariant CDF / density")
    _add_params(s)
    s.add_argument("--grid", type=int)
    s.add_argument("--tol", type=float)
    s.add_argument("--max-iter", type=int)
    s.add_argument("--method", choices=("cdf", "q2"))
    s.add_argument("--solver-config", default=None)
    s.add_argument("--out")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("classify", help="density regime report")
    _add_params(s)
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("diagnose", help="scaling fits, marginal KS and contraction checks")
    _add_params(s)
    s.add_argument("kind", choices=("corner", "strip", "marginals", "contraction"))
    s.add_argument("--log", default=None, help="existing event CSV; otherwise simulate")
    s.add_argument("--events", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--burn-in", type=float)
    s.add_argument("--regime", type=int)
    s.add_argument("--eps-grid", default=None, help="comma-separated decreasing scales")
    s.add_argument("--t-anchor", type=float)
    s.add_argument("--min-count", type=int)
    s.add_argument("--pairs", type=int)
    s.add_argument("--tolerance", type=float)
    s.add_argument("--out")
    s.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("reduce", help="reduce a linear switching system to canonical form")
    s.add_argument("--config", default=None, help="system JSON")
    s.add_argument("--preset", choices=("gene-expression", "pde-modes"), default=None)
    s.add_argument("--alpha-prod", type=float)
    s.add_argument("--delta", type=float)
    s.add_argument("--beta-prod", type=float)
    s.add_argument("--gamma", type=float)
    s.add_argument("--xstar", type=float)
    s.add_argument("--ystar", type=float)
    s.add_argument("--k", type=int)
    s.add_argument("--m", type=int)
    s.add_argument("--lambda0", type=float)
    s.add_argument("--lambda1", type=float)
    s.add_argument("--verify", action="store_true")
    s.add_argument("--out", default=None)
    s.add_argument("--chain", nargs=argparse.REMAINDER, default=None,
                   help="run another subcommand with the canonical parameters")
    s.set_defaults(func=cmd_reduce)
    ap.get_default("_parsers").update(sub.choices)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_threads()
        return args.func(args)
    except CliError as exc:
        if exc.code == EXIT_VALIDATION:
            parser.get_default("_parsers")[args.command].print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except Exception as exc:
        from pdmplab.simulate import InsufficientDataError

        if isinstance(exc, InsufficientDataError):
            print(f"error: insufficient data: {exc}", file=sys.stderr)
            return EXIT_INSUFFICIENT
        raise


if __name__ == "__main__":
    sys.exit(main())
