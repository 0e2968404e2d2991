"""``msetbandit`` command line: run experiments, verification suites and plots.

Exit codes: 0 success, 1 failed checks or runtime failure, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from . import harness, plotting, verify
from .exceptions import ConfigError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _err(msg):
    print(f"msetbandit: {msg}", file=sys.stderr)


def cmd_run(args):
    try:
        config = harness.ExperimentConfig.from_file(args.config)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_USAGE
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        traces = harness.run_experiment(config, workers=args.workers)
        harness.write_traces_csv(out / "traces.csv", traces)
        harness.write_summary_csv(out / "summary.csv", harness.aggregate(traces))
    except (OSError, RuntimeError, ValueError) as exc:
        _err(f"run failed: {exc}")
        return EXIT_FAIL
    broken = [tr for tr in traces if tr.error is not None]
    for tr in broken:
        _err(f"policy {tr.policy} rep {tr.rep}: {tr.error}")
    print(f"wrote {out / 'traces.csv'} and {out / 'summary.csv'} "
          f"({len(traces) - len(broken)} traces)")
    return EXIT_FAIL if broken else EXIT_OK


def _mk_pair(text):
    try:
        m, k = text.split(",")
        return int(m), float(k)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected M,K but got {text!r}") from None


def cmd_verify(args):
    kw = {"seed": args.seed, "instances": args.instances, "samples": args.samples}
    if args.tol is not None:
        kw["tol"] = args.tol
    if args.k:
        kw["k_grid"] = tuple(args.k)
    if args.mk:
        kw["mk_grid"] = tuple(args.mk)
    try:
        rows = verify.run_suite(args.suite, **kw)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except (ArithmeticError, RuntimeError) as exc:
        _err(f"verification aborted: {exc}")
        return EXIT_FAIL
    verify.write_csv(args.out, rows)
    failed = [r for r in rows if not r.passed]
    for r in failed:
        print(f"FAIL {r.name} {r.parameters}: value={r.value!r} bound={r.bound!r}")
    print(f"{len(rows) - len(failed)}/{len(rows)} checks passed; wrote {args.out}")
    return EXIT_FAIL if failed else EXIT_OK


def _load_summaries(path):
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), None)
    if header == ["policy", "t", "mean", "sd", "se"]:
        return harness.read_summary_csv(path)
    if header == ["policy", "rep", "t", "cum_pseudo_regret"]:
        return harness.aggregate(harness.read_traces_csv(path))
    raise ValueError("not a summary.csv or traces.csv file")


def cmd_plot(args):
    try:
        summaries = _load_summaries(args.input)
        panels = tuple(p.strip() for p in args.panels.split(",") if p.strip())
        spec = plotting.PlotSpec(summaries, panels=panels, title=args.title)
    except FileNotFoundError:
        _err(f"no such file: {args.input}")
        return EXIT_USAGE
    except (ValueError, KeyError, csv.Error) as exc:
        _err(f"cannot plot {args.input}: {exc}")
        return EXIT_USAGE
    try:
        plotting.write_svg(args.out, spec)
    except OSError as exc:
        _err(str(exc))
        return EXIT_FAIL
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="msetbandit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--out", default=".", help="output directory (default: .)")
    r.add_argument("--workers", type=int, default=None,
                   help="worker processes (default: CPU count, capped by MSET_THREADS)")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="run a numerical check battery")
    v.add_argument("suite", choices=verify.SUITES)
    v.add_argument("--k", type=float, nargs="+", help="K grid for the U-ratio witness")
    v.add_argument("--mk", type=_mk_pair, nargs="+", metavar="M,K",
                   help="(M, K) grid for the R-ratio witness")
    v.add_argument("--tol", type=float, default=None, help="quadrature tolerance")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--instances", type=int, default=None,
                   help="random lambda instances for the phi suite")
    v.add_argument("--samples", type=int, default=None,
                   help="Monte-Carlo samples per instance for the phi suite")
    v.add_argument("--out", default="verify.csv")
    v.set_defaults(func=cmd_verify)

    pl = sub.add_parser("plot", help="plot summary.csv (or traces.csv) as SVG")
    pl.add_argument("input")
    pl.add_argument("--out", required=True)
    pl.add_argument("--panels", default="linear,loglog")
    pl.add_argument("--title", default="")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
