"""Command line front end.

  aggmia gen     write a synthetic panel to a .npz file
  aggmia run     execute an experiment spec, write results + error log
  aggmia plot    render SVG figures from a results.csv
  aggmia report  print a plain-text summary of a results.csv

`run` exits 0 only when every cell of the sweep succeeded; any recorded
cell error turns the exit code to 1 (results for the surviving cells are
still written).
"""

from __future__ import annotations

import argparse
import sys

from .core import save_panel
from .runner import RunnerError, emit_plots, load_rows, pg_series, run
from .synthgen import GeneratorConfig, generate_panel


def _add_gen(sub):
    p = sub.add_parser("gen", help="generate a synthetic panel")
    p.add_argument("--kind", choices=("commuter", "cab"), default="commuter")
    p.add_argument("--users", type=int, required=True)
    p.add_argument("--rois", type=int, required=True)
    p.add_argument("--slots", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--regularity", type=float, default=None)
    p.add_argument("--active-fraction", type=float, default=None)
    p.add_argument("--activity-spread", type=float, default=None)
    p.add_argument("--out", required=True)


def _add_run(sub):
    p = sub.add_parser("run", help="execute an experiment spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", default="results")
    p.add_argument("--seed", type=int, default=None,
                   help="override the spec root seed")
    p.add_argument("--workers", type=int, default=None,
                   help="parallel worker count (also AGGMIA_WORKERS)")
    p.add_argument("--clamp-nonneg", action="store_true", default=None,
                   help="clamp perturbed aggregates at zero")


def _add_plot(sub):
    p = sub.add_parser("plot", help="render figures from results.csv")
    p.add_argument("--rows", required=True)
    p.add_argument("--out", default="figures")
    p.add_argument("--kind", choices=("all", "cdf", "box", "line"), default="all")


def _add_report(sub):
    p = sub.add_parser("report", help="summarize results.csv")
    p.add_argument("--rows", required=True)


def _cmd_gen(args) -> int:
    cfg = GeneratorConfig(
        user_count=args.users,
        roi_count=args.rois,
        slot_count=args.slots,
        kind=args.kind,
        seed=args.seed,
        regularity=args.regularity,
        active_slot_fraction=args.active_fraction,
        activity_spread=args.activity_spread,
    )
    panel = generate_panel(cfg)
    save_panel(panel, args.out)
    print(f"wrote {args.kind} panel ({args.users} users, {args.rois} rois, "
          f"{args.slots} slots) to {args.out}")
    return 0


def _cmd_run(args) -> int:
    result = run(
        args.spec,
        out_dir=args.out,
        workers=args.workers,
        seed=args.seed,
        clamp_nonneg=args.clamp_nonneg,
    )
    print(f"{len(result.rows)} result rows -> {result.paths['csv']}")
    if result.errors:
        print(f"{len(result.errors)} cell errors -> {result.paths['errors']}",
              file=sys.stderr)
        return 1
    return 0


def _cmd_plot(args) -> int:
    rows = load_rows(args.rows)
    kinds = ("cdf", "box", "line") if args.kind == "all" else (args.kind,)
    for path in emit_plots(rows, args.out, kinds=kinds):
        print(path)
    return 0


def _group_mean(rows, key, value):
    buckets = {}
    for row in rows:
        buckets.setdefault(key(row), []).append(value(row))
    return {k: sum(v) / len(v) for k, v in sorted(buckets.items())}


def _cmd_report(args) -> int:
    rows = load_rows(args.rows)
    best = [r for r in rows if r.classifier == "BEST" and r.mechanism == "none"]
    if best:
        print("mean AUC of the best distinguisher, by prior / window / m:")
        means = _group_mean(
            best, lambda r: (r.prior, r.window, r.m), lambda r: r.auc
        )
        for (prior, window, m), auc in means.items():
            print(f"  {prior:20s} {window:10s} m={m:<5d} auc={auc:.3f}")
    noisy = [r for r in rows if r.classifier == "BEST" and r.mechanism != "none"]
    if noisy:
        print("mean privacy gain and relative error, by mechanism / epsilon:")
        pg = pg_series(rows)
        err = _group_mean(
            noisy, lambda r: (r.mechanism, r.epsilon), lambda r: r.mre
        )
        for mech, (eps_list, means) in pg.items():
            for eps, mean_pg in zip(eps_list, means):
                print(f"  {mech:10s} eps={eps:<8g} pg={mean_pg:.3f} "
                      f"mre={err[(mech, eps)]:.3f}")
    if not best and not noisy:
        print("no BEST rows found; nothing to report")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="aggmia",
        description="membership inference risk measurement on aggregate "
                    "location time-series",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_gen(sub)
    _add_run(sub)
    _add_plot(sub)
    _add_report(sub)
    args = parser.parse_args(argv)
    handlers = {
        "gen": _cmd_gen,
        "run": _cmd_run,
        "plot": _cmd_plot,
        "report": _cmd_report,
    }
    try:
        return handlers[args.command](args)
    except (RunnerError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
