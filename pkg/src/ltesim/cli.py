"""Command line: ``python -m ltesim <subcommand> [options]``."""

import argparse
import json
import sys

from . import harness
from .models import MODEL_NAMES, get_model
from .schemes import SCHEMES, simulate_path


def _add_common(p):
    p.add_argument("--config", help="JSON file with ExperimentConfig fields; flags override it")
    p.add_argument("--model", choices=MODEL_NAMES)
    p.add_argument("--gamma", type=float, help="Nagumo threshold parameter")
    p.add_argument("--scheme", help=f"comma-separated subset of {','.join(SCHEMES)}")
    p.add_argument("--lambda", dest="lam", help="noise scale(s), comma-separated")
    p.add_argument("--T", type=float)
    p.add_argument("--dx", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--levels", help="comma-separated levels l (dx = 2^-l, dt = 4^-l T)")
    p.add_argument("--ref-level", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output CSV path (stdout if omitted)")
    p.add_argument("--threads", type=int)
    p.add_argument("--nu", type=float, help="proposal tail parameter in (0, 1)")
    p.add_argument("--test-function", help="F1, F2 or F1,F2")
    p.add_argument("--block-size", type=int)
    p.add_argument("--no-timings", action="store_true",
                   help="write nan for wall_seconds so reruns are byte-identical")


def _config(args):
    over = {
        "model": args.model, "gamma": args.gamma, "schemes": args.scheme, "lambdas": args.lam,
        "T": args.T, "dx": args.dx, "dt": args.dt, "levels": args.levels,
        "reference_level": args.ref_level, "samples": args.samples, "seed": args.seed,
        "output_path": args.out, "threads": args.threads, "nu": args.nu,
        "test_function": args.test_function, "block_size": args.block_size,
    }
    if args.no_timings:
        over["timings"] = False
    over = {k: v for k, v in over.items() if v is not None}
    if args.config:
        return harness.ExperimentConfig.from_json(args.config, **over)
    return harness.ExperimentConfig.from_dict(over)


def _with_suffix(path, tag):
    stem, dot, ext = path.rpartition(".")
    return f"{stem}_{tag}.{ext}" if dot else f"{path}_{tag}"


def _emit(report, path):
    if path:
        harness.emit_csv(report, path)
        return
    harness.write_csv(report, sys.stdout)


def cmd_simulate(args):
    cfg = _config(args)
    model = cfg.build_model()
    grid = harness.grid_from_steps(cfg.dx, cfg.dt, cfg.T)
    traj = simulate_path(cfg.schemes[0], model, grid, cfg.lambdas[0], cfg.seed, 0, nu=cfg.nu)
    if cfg.output_path:
        harness.emit_trajectory_csv(traj, model, cfg.output_path)
    else:
        harness.write_trajectory_csv(traj, model, sys.stdout)


def cmd_boundary(args):
    if args.scheme is None and not args.config:
        args.scheme = ",".join(SCHEMES)
    if args.samples is None and not args.config:
        args.samples = 100
    cfg = _config(args)
    _emit(harness.boundary_table(cfg), cfg.output_path)


def cmd_weak(args):
    cfg = _config(args)
    reports = harness.weak_error_experiments(cfg)
    for kind, rep in reports.items():
        path = cfg.output_path
        if path and len(reports) > 1:
            path = _with_suffix(path, kind)
        _emit(rep, path)


def cmd_exactsim_check(args):
    cfg = _config(args)
    names = [args.model] if args.model else list(MODEL_NAMES)
    samples = args.samples or 100_000
    dt = args.dt or 0.05
    results = []
    for name in names:
        model = get_model(name, cfg.gamma)
        res = harness.exactsim_check(model, x0=args.x0, dt=dt, samples=samples,
                                     seed=cfg.seed, nu=cfg.nu)
        res["pass"] = bool(abs(res["mean_z"]) < 3 and abs(res["var_z"]) < 3 and res["ks"] < 0.01)
        results.append(res)
        print(json.dumps(res))
    return 0 if all(r["pass"] for r in results) else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="ltesim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, doc in [
        ("simulate", cmd_simulate, "one trajectory as t,x,value CSV"),
        ("boundary-table", cmd_boundary, "count paths that stay in the domain"),
        ("weak-error", cmd_weak, "LTE weak errors against a fine reference"),
        ("exactsim-check", cmd_exactsim_check, "exact step vs fine Euler-Maruyama"),
    ]:
        p = sub.add_parser(name, help=doc)
        _add_common(p)
        if name == "exactsim-check":
            p.add_argument("--x0", type=float, default=0.2)
        p.set_defaults(func=fn)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        rc = args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return rc or 0


if __name__ == "__main__":
    sys.exit(main())
