"""Command line entry point.

Exit codes: 0 success, 1 runtime or check failure, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

import numpy as np

from .errors import ConfigError, PLWError
from .harness import (build_from_config, load_config, noise_sweep, run_experiment)

log = logging.getLogger("plw")


def _deltas(text):
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad noise list {text!r}") from None
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("noise levels must be positive")
    return vals


def _seeds(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None


def build_parser():
    p = argparse.ArgumentParser(prog="plw", description=(
        "Relaxed projection Landweber methods: experiments and diagnostics."))
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the configured methods and write CSV histories")
    r.add_argument("config")
    r.add_argument("--output-dir", help="overrides the config and $PLW_OUTPUT_DIR")
    r.add_argument("--plot", action="store_true", help="also write history.png")

    sub.add_parser("check", help="invariant and property checks on synthetic operators")

    g = sub.add_parser("gradcheck", help="adjoint and finite-difference diagnostics")
    g.add_argument("config")
    g.add_argument("--trials", type=int, default=10)
    g.add_argument("--tol", type=float, default=1e-4)

    s = sub.add_parser("noise-sweep", help="error at the discrepancy stop versus noise")
    s.add_argument("config")
    s.add_argument("--deltas", type=_deltas, required=True, help="e.g. 0.04,0.02,0.01")
    s.add_argument("--seeds", type=_seeds, help="comma-separated; default: config seed")
    s.add_argument("--method", default="PLW", help="method whose trend is checked")
    s.add_argument("--output-dir")
    s.add_argument("--plot", action="store_true", help="also write sweep.png")
    return p


def cmd_run(args):
    cfg = load_config(args.config)
    res = run_experiment(cfg, out_dir=args.output_dir)
    out = res.paths[-1].parent
    for r in res.results:
        s = r.summary
        print(f"{s['method']:>10}  stop_k={s['stop_k']:<5d} status={s['status']:<14} "
              f"residual={s['final_residual']}  error={s['final_error']}")
    if args.plot:
        from .plotting import plot_histories
        tau_delta = cfg.tau * res.noise.delta_abs if res.noise.delta_abs > 0 else None
        print(f"wrote {plot_histories(res.results, out / 'history.png', tau_delta)}")
    print(f"wrote {len(res.paths)} CSV files to {out}")
    return 1 if any(r.history.status == "aborted" for r in res.results) else 0


def cmd_check(args):
    from .checks import run_all
    results = run_all()
    for c in results:
        print(c.line())
    return 0 if all(c.ok for c in results) else 1


def cmd_gradcheck(args):
    from .operators import adjoint_dot_test, fd_adjoint_defect, fd_derivative_error
    cfg = load_config(args.config)
    pb = build_from_config(cfg)
    op, x = pb.op, pb.x_star
    dot = adjoint_dot_test(op, x, args.trials, cfg.seed)
    fd_adj = fd_adjoint_defect(op, x, args.trials, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    fd = max(fd_derivative_error(op, x, op.tangent(rng.standard_normal(x.shape)), 1e-5)
             for _ in range(args.trials))
    print(f"dot test defect        {dot:.3e}")
    print(f"FD vs adjoint defect   {fd_adj:.3e}  (limit {args.tol:.0e})")
    print(f"FD derivative rel err  {fd:.3e}")
    ok = fd_adj <= args.tol
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def cmd_noise_sweep(args):
    cfg = load_config(args.config)
    if args.output_dir:
        cfg = replace(cfg, output_dir=args.output_dir)
    res = noise_sweep(cfg, args.deltas, args.seeds, args.method)
    for delta, seed, method, k, _, err, status in res.rows:
        print(f"delta={delta:<6g} seed={seed:<3d} {method:>10}  stop_k={k:<5d} error={err}  {status}")
    for seed, i, rel in res.inversions:
        print(f"inversion: seed {seed}, step {i}, error up by {100 * rel:.2f}%")
    if args.plot:
        from .plotting import plot_sweep
        print(f"wrote {plot_sweep(res.rows, cfg.out_path / 'sweep.png')}")
    print(f"semi-convergence trend for {args.method}: {'PASS' if res.ok else 'FAIL'}")
    return 0 if res.ok else 1


COMMANDS = {"run": cmd_run, "check": cmd_check, "gradcheck": cmd_gradcheck,
            "noise-sweep": cmd_noise_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"plw: config error: {exc}", file=sys.stderr)
        return 2
    except (PLWError, ArithmeticError, ValueError, OSError) as exc:
        print(f"plw: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
