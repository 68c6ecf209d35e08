"""Command line entry point: ``jpais {run,feedback,plot,diag,complexity}``."""

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import harness
from .metrics import ALGORITHMS as CX_ALGORITHMS
from .metrics import complexity_count, overhead
from .mmse import GPC, IPC


def _grid_args(p):
    g = p.add_argument_group("grid (comma-separated lists override the preset/config)")
    g.add_argument("--snr", dest="snr_db", help="SNR values in dB")
    g.add_argument("--K", help="numbers of users")
    g.add_argument("--n-r", dest="n_r", help="numbers of relays")
    g.add_argument("--fdT", help="normalized Doppler values")
    g.add_argument("--algorithms", help="subset of " + ",".join(harness.ALGORITHMS))
    g.add_argument("--modes", help="mmse, adaptive or both")
    p.add_argument("--preset", choices=sorted(harness.PRESETS))
    p.add_argument("--config", type=Path, help="key = value settings file")
    p.add_argument("--runs", type=int)
    p.add_argument("--paper-scale", action="store_true",
                   help=f"use {harness.PAPER_RUNS} runs instead of {harness.DESK_RUNS}")
    p.add_argument("--seed", type=int)
    p.add_argument("--block-size", type=int, help="runs per seed block (0 = one block)")
    p.add_argument("--workers", type=int)
    p.add_argument("--name", help="CSV file stem")
    p.add_argument("--out", dest="out_dir", help="output directory")
    p.add_argument("--no-plots", action="store_true")


def _spec(args, **extra):
    over = {k: getattr(args, k) for k in (
        "snr_db", "K", "n_r", "fdT", "algorithms", "modes", "seed", "block_size", "workers", "name", "out_dir",
    )}
    over["runs"] = harness.PAPER_RUNS if args.paper_scale else args.runs
    over.update(extra)
    return harness.load_spec(args.config, args.preset, **over)


def _report(result, no_plots):
    print(f"wrote {result.csv_path}")
    if not no_plots:
        from .plotting import emit_plots

        for path in emit_plots(result.csv_path):
            print(f"wrote {path}")


def cmd_run(args):
    _report(harness.run_experiment(_spec(args)), args.no_plots)


def cmd_feedback(args):
    extra = {"p_e": args.p_e} if args.p_e else {}
    _report(harness.run_feedback_experiment(_spec(args, **extra)), args.no_plots)


def cmd_plot(args):
    from .plotting import emit_plots

    for path in emit_plots(args.csv, kinds=args.kind, out_dir=args.out):
        print(f"wrote {path}")


def cmd_diag(args):
    from .diagnostics import convexity_bound, headline_scenario, init_invariance_test

    scn = headline_scenario(seed=args.seed, snr_db=args.snr)
    rng_seed = np.random.SeedSequence(args.seed)
    for mode in args.modes:
        bound, excluded = convexity_bound(
            mode, scn, n_probes=args.n_probes, n_mc=args.n_mc,
            rng=np.random.default_rng(rng_seed), method=args.method,
        )
        print(f"{mode}: convexity bound {bound:.6g} (excluded directions {excluded:.1%})")
        P = args.factor * bound
        rep = init_invariance_test(mode, scn, n_inits=args.inits, P=P, rng=np.random.default_rng(args.seed + 1))
        print(f"{mode}: at P = {P:.6g}, cost spread {rep.cost_spread:.3e}, "
              f"allocation distance {rep.alloc_distance:.3e}, iterations {rep.iterations}")


def cmd_complexity(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{args.name}.csv"
    Ks = harness._tuple(args.K, int)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["algorithm", "K", "N", "L", "n_r", "adds", "mults"])
        for alg in CX_ALGORITHMS:
            for K in Ks:
                adds, mults = complexity_count(alg, K=K, N=args.N, L=args.L, n_r=args.n_r)
                w.writerow([alg, K, args.N, args.L, args.n_r, adds, mults])
    print(f"wrote {path}")
    for K in Ks:
        gpc = overhead("JPAIS-GPC", "CIS-up", K=K, N=args.N, L=args.L, n_r=args.n_r)
        ipc = overhead("JPAIS-IPC", "CIS-down", K=K, N=args.N, L=args.L, n_r=args.n_r)
        print(f"K={K}: multiplication overhead GPC vs CIS-up {gpc:.1%}, IPC vs CIS-down {ipc:.1%}")
    if not args.no_plots:
        from .plotting import emit_plots

        for p in emit_plots(path, kinds=["complexity"]):
            print(f"wrote {p}")


def build_parser():
    parser = argparse.ArgumentParser(prog="jpais", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate a grid and write the metrics CSV and figures")
    _grid_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("feedback", help="sweep feedback bit error probabilities")
    _grid_args(p)
    p.add_argument("--p-e", dest="p_e", help="bit error probabilities")
    p.set_defaults(func=cmd_feedback)

    p = sub.add_parser("plot", help="render figures from an existing CSV")
    p.add_argument("csv", type=Path)
    p.add_argument("--kind", action="append", help="figure kind (repeatable)")
    p.add_argument("--out", type=Path, help="output directory (default: next to the CSV)")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("diag", help="convexity bound and initialization invariance")
    p.add_argument("--modes", nargs="+", default=[GPC, IPC], choices=[GPC, IPC])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--snr", type=float, default=12.0)
    p.add_argument("--n-probes", type=int, default=200)
    p.add_argument("--n-mc", type=int, default=2000)
    p.add_argument("--method", choices=("mc", "exact"), default="mc")
    p.add_argument("--factor", type=float, default=1.25, help="test power as a multiple of the bound")
    p.add_argument("--inits", type=int, default=5)
    p.set_defaults(func=cmd_diag)

    p = sub.add_parser("complexity", help="per-symbol operation counts")
    p.add_argument("--K", default="2,4,8,12,16,20,24,28,32")
    p.add_argument("--N", type=int, default=16)
    p.add_argument("--L", type=int, default=3)
    p.add_argument("--n-r", dest="n_r", type=int, default=2)
    p.add_argument("--name", default="complexity")
    p.add_argument("--out", default="results")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_complexity)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ValueError, OSError) as exc:
        print(f"jpais: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
