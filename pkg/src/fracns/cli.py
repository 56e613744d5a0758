"""Command line entry point ``fracns``.

Subcommands: ``simulate``, ``diagnose``, ``scan``, ``operators``, ``verify``
and ``curves``. Every output is written under ``--out``. Exit status is 0 on
success, 1 when ``verify`` finds a failing criterion, 2 on configuration or
input errors and 3 on a numerical abort.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import io as fio

EXIT_OK, EXIT_ACCEPTANCE, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


class NumericalAbort(RuntimeError):
    pass


def _numerical_errors() -> tuple:
    from .diagnostics import FlowMapError
    from .extension import QuadratureError
    from .solver import SolverDivergedError

    return (SolverDivergedError, QuadratureError, FlowMapError, FloatingPointError, NumericalAbort)


def _check_threads() -> int:
    raw = os.environ.get("FRACNS_THREADS")
    if raw is None:
        return 1
    try:
        value = int(raw)
    except ValueError:
        value = 0
    if value < 1:
        raise fio.ConfigError(f"config error at $FRACNS_THREADS: expected a positive integer, got {raw!r}")
    return value


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(out: Path, name: str, report: dict) -> None:
    fio.write_report(out / f"{name}.json", report)
    print(f"wrote {out / (name + '.json')}")


def _load_traj(path):
    from .pressure import solve_pressure

    traj = fio.read_trajectory(path)
    if traj.pressure is None:
        traj.pressure = [solve_pressure(traj.grid, u).p for u in traj.frames]
    return traj


# simulate ------------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    from .solver import make_initial, run

    cfg = fio.load_config(args.config)
    scfg = fio.solver_config(cfg)
    init = cfg.get("solver", {}).get("initial", {"kind": "random_band"})
    u0 = make_initial(init["kind"], scfg.grid, init.get("params"), scfg.seed)
    t0 = time.perf_counter()
    traj = run(scfg, u0)
    elapsed = time.perf_counter() - t0
    if not all(np.isfinite(traj.energy)):
        raise NumericalAbort("non-finite energy")
    out = _out_dir(args)
    fio.write_trajectory(out, traj, cfg)
    results = {
        "frames": len(traj),
        "final_energy": traj.energy[-1],
        "energy_residual_max": float(traj.energy_residual.max()),
        "dissipation": traj.dissipation[-1],
    }
    _emit(out, "simulate", fio.make_report("simulate", results, cfg, timing={"seconds": elapsed}))
    return EXIT_OK


# diagnose ------------------------------------------------------------------------------

def cmd_diagnose(args) -> int:
    from . import diagnostics as dg
    from .extension import extend, weighted_energy
    from .fields import smooth_cutoff
    from .spectral import derivative_tensor, pointwise_norm

    cfg = fio.load_config(args.config) if args.config else None
    traj = _load_traj(args.traj)
    g, s = traj.grid, traj.s
    stride = max(1, args.stride)
    rows = []
    for k in range(0, len(traj), stride):
        u = traj.frames[k]
        row = {"t": float(traj.times[k]), "energy": float(traj.energy[k]),
               "F_ratio": dg.F_global_ratio(g, u, s),
               "G_integral": weighted_energy(extend(g, u, s), normalize=False)}
        for n in (1, 2):
            p = dg.derivative_exponent(s, n)
            mag = pointwise_norm(derivative_tensor(g, u, n), ndim=3)
            row[f"weak_L{n}"] = dg.weak_lp_norm(g, mag, p).C
        rows.append(row)
    phi = smooth_cutoff(g.distance(), g.L / 8, g.L / 4)
    lei = dg.local_energy_residual(traj, phi)
    out = _out_dir(args)
    header = list(rows[0])
    fio.write_csv(out / "diagnose.csv", header, [[r[h] for h in header] for r in rows])
    results = {"frames": rows, "lei": {"residual": lei.residual, "relative": lei.relative, "terms": lei.terms},
               "exponents": {"p1": dg.derivative_exponent(s, 1), "p2": dg.derivative_exponent(s, 2)}}
    prov = {"trajectory": str(args.traj), "resolution": g.n, "s": s}
    _emit(out, "diagnose", fio.make_report("diagnose", results, cfg, prov))
    return EXIT_OK


# scan ----------------------------------------------------------------------------------

def default_lambda_ladder(t: float, s: float, rungs: int = 4) -> list[float]:
    """Largest rung with ``(5 lambda)**(2s) = 0.9 t``, then halving."""
    top = (0.9 * t) ** (1 / (2 * s)) / 5
    return [top * 2.0**-k for k in range(rungs)][::-1]


def default_cylinder_ladder(L: float, span: float, s: float, rungs: int = 2) -> list[float]:
    """``L/8`` (or the largest radius whose time extent ``r**(2s)`` fits the span), then halving."""
    top = min(L / 8, 0.999 * span ** (1 / (2 * s)))
    return [top * 2.0**-k for k in range(rungs)]


def cmd_scan(args) -> int:
    from . import diagnostics as dg

    cfg = fio.load_config(args.config) if args.config else None
    diag = (cfg or {}).get("diagnostics", {})
    traj = _load_traj(args.traj)
    g, s = traj.grid, traj.s
    span = float(traj.times[-1] - traj.times[0])
    radii = diag.get("cylinder_ladder") or default_cylinder_ladder(g.L, span, s)
    eps = diag.get("eps", "auto")
    rep = dg.eps_regularity_scan(traj, 0.0 if eps == "auto" else eps, radii)
    if eps == "auto":
        rep = rep.with_eps(dg.calibrated_eps(rep))
    t = float(traj.times[-1])
    lams = diag.get("lambda_ladder") or default_lambda_ladder(span, s)
    rows = dg.levelset_bound_check(traj, lams, t)
    out = _out_dir(args)
    fio.write_csv(out / "scan.csv", ["center_x1", "center_x2", "center_x3", "t", "r", "total", "small"],
                  [[*c.center, c.t, c.r, tot, int(tot <= rep.eps)] for c, tot in zip(rep.cylinders, rep.totals)])
    fio.write_csv(out / "levelsets.csv", ["lambda", "window", "dissipation", "measure_1", "measure_2", "ratio_1", "ratio_2"],
                  [[r.lam, r.window, r.dissipation, r.measures[1], r.measures[2], r.ratios[1], r.ratios[2]] for r in rows])
    radii_sorted = sorted(rep.bad_counts)
    fio.svg_plot(out / "scan.svg", {"M'(r)": ([1 / r for r in radii_sorted],
                                               [max(rep.bad_counts[r], 0) or np.nan for r in radii_sorted])},
                 xlabel="1/r", ylabel="bad cylinders", logx=True, logy=True)
    results = {"scan": rep.as_dict(),
               "levelsets": [{"lambda": r.lam, "window": r.window, "dissipation": r.dissipation,
                              "measures": r.measures, "ratios": r.ratios} for r in rows],
               "spread": {n: dg.ladder_spread(rows, n) for n in (1, 2)}}
    prov = {"trajectory": str(args.traj), "resolution": g.n, "s": s}
    _emit(out, "scan", fio.make_report("scan", results, cfg, prov))
    return EXIT_OK


# operators -----------------------------------------------------------------------------

def _field(args):
    if not args.field:
        raise fio.ConfigError("config error at $.field: this operator needs --field")
    return fio.read_field(args.field)


def _op_s(args, ff) -> float:
    s = args.s if args.s is not None else ff.s
    if s is None:
        raise fio.ConfigError("config error at $.s: pass --s (the field file stores none)")
    return s


def cmd_operators(args) -> int:
    from . import diagnostics as dg
    from . import maximal as mx
    from .extension import extend, graded_levels, recover_frac_laplacian
    from .pressure import solve_pressure
    from .solver import make_initial
    from .spectral import TorusGrid, fractional_heat, fractional_laplacian, littlewood_paley, riesz_transform

    out = _out_dir(args)
    op = args.op
    results, prov = {}, {"operator": op, "field": args.field}
    if op == "init":
        g = TorusGrid(args.n, args.L)
        params = json.loads(args.params) if args.params else None
        u = make_initial(args.kind, g, params, args.seed)
        fio.write_field(out / "init.fns", u, g.L, args.s)
        results = {"kind": args.kind, "n": args.n, "seed": args.seed}
        _emit(out, "operators-init", fio.make_report("operators/init", results, provenance=prov))
        return EXIT_OK
    ff = _field(args)
    g, f = ff.grid, ff.data
    prov["resolution"] = g.n
    if op == "fraclap":
        res = fractional_laplacian(g, f, args.gamma)
    elif op == "riesz":
        res = riesz_transform(g, f, args.j)
    elif op == "heat":
        res = fractional_heat(g, f, args.t, _op_s(args, ff))
    elif op == "lp":
        res = littlewood_paley(g, f, args.j)
    elif op == "maximal":
        mag = np.abs(f) if f.ndim == 3 else np.sqrt(np.sum(f**2, axis=0))
        if args.kind == "hl":
            res = mx.hardy_littlewood_max(g, mag)
        elif args.kind == "smooth":
            res = mx.smooth_max(g, mag, mx.gaussian_profile())
        else:
            res = mx.grand_max_approx(g, mag, mx.hermite_gaussian_family())
    elif op == "extend":
        ext = extend(g, f, _op_s(args, ff), graded_levels(g.L, args.levels))
        fio.write_extended(out / "extend.fns", ext)
        results = {"levels": args.levels, "y_min": float(ext.y_levels[0]), "y_max": float(ext.y_levels[-1])}
        res = None
    elif op == "recover":
        s = _op_s(args, ff)
        res = recover_frac_laplacian(extend(g, f, s))
        ref = fractional_laplacian(g, f, 2 * s)
        den = np.linalg.norm(ref)
        results = {"relative_error_vs_spectral": float(np.linalg.norm(res - ref) / den) if den > 0 else 0.0}
    elif op == "pressure":
        res = solve_pressure(g, f).p
    elif op == "weaklp":
        mag = np.abs(f) if f.ndim == 3 else np.sqrt(np.sum(f**2, axis=0))
        w = dg.weak_lp_norm(g, mag, args.p)
        results = {"p": args.p, "C": w.C, "attained": w.attained}
        res = None
    elif op == "commutator":
        return _op_commutator(args, ff, out, prov)
    else:  # argparse restricts choices
        raise fio.ConfigError(f"config error at $.op: unknown operator {op!r}")
    if res is not None:
        fio.write_field(out / f"{op}.fns", res, g.L, ff.s)
        results.setdefault("l2_norm", float(np.sqrt(np.sum(res**2) * g.cell_volume)))
    _emit(out, f"operators-{op}", fio.make_report(f"operators/{op}", results, provenance=prov))
    return EXIT_OK


def _op_commutator(args, ff, out, prov) -> int:
    from . import commutator as cm

    g, G = ff.grid, ff.data
    cp = cm.CutoffPair(args.R, args.R0)
    pieces = cm.decomposed_commutator(g, cp, G, args.beta)
    for name, arr in pieces.as_dict().items():
        fio.write_field(out / f"commutator_{name}.fns", arr, g.L, ff.s)
    gap = cm.oracle_gap(g, cp, G, args.beta)
    s = args.s if args.s is not None else (ff.s if ff.s is not None else args.beta / 2)
    rows = []
    for name, arr in pieces.as_dict().items():
        rows.append(["piece", name, "", float(np.sqrt(np.sum(arr**2) * g.cell_volume))])
    if args.beta > s:
        for variant, gamma in (("trick1", None), ("trick2", min(1.0, s + 0.1))):
            for k in (0, 1, 2):
                rows.append([variant, f"k={k}", "" if gamma is None else gamma,
                             cm.tail_trick_ratio(g, G, cp, args.beta, s, variant, k, gamma)])
    fio.write_csv(out / "commutator.csv", ["kind", "label", "gamma", "value"], rows)
    results = {"oracle_gap": gap, "constant": pieces.constant, "beta": args.beta, "R": args.R, "R0": args.R0,
               "rows": rows}
    _emit(out, "operators-commutator", fio.make_report("operators/commutator", results, provenance=prov))
    return EXIT_OK


# verify --------------------------------------------------------------------------------

def cmd_verify(args) -> int:
    from . import acceptance

    out = _out_dir(args)
    versions = fio.report_versions(out)
    if versions - {fio.REPORT_SCHEMA_VERSION}:
        raise fio.ConfigError(f"config error at $.out: report directory mixes schema versions {sorted(map(str, versions))}")
    results = acceptance.run_all(quick=args.quick, only=args.only, log=print)
    fio.write_csv(out / "verify.csv", ["criterion", "title", "passed", "summary"],
                  [[r.number, r.title, int(r.passed), r.summary] for r in results])
    report = fio.make_report("verify", {"quick": args.quick, "criteria": [
        {k: v for k, v in r.as_dict().items() if k != "seconds"} for r in results]},
        timing={r.number: r.seconds for r in results})
    _emit(out, "verify", report)
    failed = [r.number for r in results if not r.passed]
    if failed:
        print(f"failing criteria: {failed}")
        return EXIT_ACCEPTANCE
    return EXIT_OK


# curves --------------------------------------------------------------------------------

def cmd_curves(args) -> int:
    from .diagnostics import dimension_polynomials

    if args.s_min >= args.s_max or args.samples < 2:
        raise fio.ConfigError("config error at $.s: need s-min < s-max and at least two samples")
    s = np.linspace(args.s_min, args.s_max, args.samples)
    suit, leray = dimension_polynomials(s)
    out = _out_dir(args)
    fio.write_csv(out / "curves.csv", ["s", "suitable_bound", "leray_bound"], zip(s, suit, leray))
    fio.svg_plot(out / "curves.svg", {"suitable": (s, suit), "Leray-Hopf": (s, leray)},
                 xlabel="s", ylabel="box-counting bound")
    results = {"s": s, "suitable_bound": suit, "leray_bound": leray}
    _emit(out, "curves", fio.make_report("curves", results))
    print(f"wrote {out / 'curves.csv'}")
    return EXIT_OK


# parser --------------------------------------------------------------------------------

OPERATORS = ("init", "fraclap", "riesz", "heat", "lp", "maximal", "extend", "recover", "pressure", "weaklp",
             "commutator")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=".", help="output directory (created if missing)")
    parser = argparse.ArgumentParser(prog="fracns", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"fracns {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="run the solver from a RunConfig")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("diagnose", parents=[common], help="F, G, LEI and weak-Lp on a trajectory")
    p.add_argument("--traj", required=True, help="trajectory directory written by simulate")
    p.add_argument("--config")
    p.add_argument("--stride", type=int, default=1, help="use every k-th frame")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("scan", parents=[common], help="eps-regularity scan and level-set table")
    p.add_argument("--traj", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("operators", parents=[common], help="apply one operator to a field file")
    p.add_argument("op", choices=OPERATORS)
    p.add_argument("--field")
    p.add_argument("--s", type=float)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--j", type=int, default=1)
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--levels", type=int, default=64)
    p.add_argument("--kind", default="hl", help="maximal: hl|smooth|grand; init: initial-data kind")
    p.add_argument("--beta", type=float, default=1.6)
    p.add_argument("--R", type=float, default=1.0)
    p.add_argument("--R0", type=float, default=2.0)
    p.add_argument("--n", type=int, default=32)
    p.add_argument("--L", type=float, default=2 * np.pi)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--params", help="init: JSON object of initial-data parameters")
    p.set_defaults(func=cmd_operators)

    p = sub.add_parser("verify", parents=[common], help="run the acceptance criteria")
    p.add_argument("--quick", action="store_true", help="operator-layer criteria only")
    p.add_argument("--only", type=int, nargs="+", help="criterion numbers to run")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("curves", parents=[common], help="dimension-bound polynomials as CSV and SVG")
    p.add_argument("--s-min", type=float, default=0.75)
    p.add_argument("--s-max", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=26)
    p.set_defaults(func=cmd_curves)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    numerical = _numerical_errors()
    try:
        _check_threads()
        return args.func(args)
    except (fio.ConfigError, fio.FieldFormatError) as exc:
        print(f"fracns: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except numerical as exc:
        print(f"fracns: numerical abort: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, FileNotFoundError) as exc:
        print(f"fracns: invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
