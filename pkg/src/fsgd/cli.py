"""Command-line front end: synthetic streams, plan execution, reports.

Subcommands
  gen          write a synthetic factor-model stream to CSV
  run          execute a plan config file
  sweep-d      built-in dimension sweep at desk scale
  sweep-gamma  built-in step-exponent sweep at desk scale
  nn-compare   built-in method comparison on the nonlinear task
  stream       run the joint update over an existing CSV stream
  report       aggregate a summary.csv into per-group statistics
  check        run the fast invariant suite, nonzero exit on failure

Common flags: --config PATH, --out DIR, --reps N, --workers N, --seed N,
--resume. Worker count resolves as --workers, else the FSGD_WORKERS
environment variable, else the machine's cpu count.
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import datagen, harness
from .errors import FsgdError


def _add_common(sub, config=False):
    if config:
        sub.add_argument("--config", type=Path, default=None,
                         help="plan config file")
    sub.add_argument("--out", type=Path, default=None,
                     help="output directory override")
    sub.add_argument("--reps", type=int, default=None,
                     help="repetitions override")
    sub.add_argument("--workers", type=int, default=None,
                     help="parallel worker count (default: FSGD_WORKERS "
                          "or cpu count)")
    sub.add_argument("--seed", type=int, default=None,
                     help="base seed override (rep r runs at seed + r)")
    sub.add_argument("--resume", action="store_true",
                     help="skip grid points whose outputs already exist")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="fsgd",
        description="streaming factor-augmented SGD experiment driver")
    sp = ap.add_subparsers(dest="command", required=True)

    gen = sp.add_parser("gen", help="emit a synthetic CSV stream")
    gen.add_argument("--out", type=Path, required=True, help="CSV path")
    gen.add_argument("--n", type=int, default=10_000,
                     help="number of samples")
    gen.add_argument("--d", type=int, default=40, help="ambient dimension")
    gen.add_argument("--k", type=int, default=3, help="latent factors")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--noise-sd", type=float, default=None,
                     help="response noise level (default sqrt(0.3))")
    gen.add_argument("--response", choices=("linear", "nn"),
                     default="linear", help="response family")
    gen.add_argument("--with-factors", action="store_true",
                     help="include true factor columns f1..fk")

    run = sp.add_parser("run", help="execute a plan config file")
    run.add_argument("config", type=Path, help="plan config file")
    _add_common(run)

    for name, blurb in (("sweep-d", "error vs dimension, fixed gamma"),
                        ("sweep-gamma", "error vs step exponent, fixed d"),
                        ("nn-compare", "method comparison, nonlinear task")):
        sub = sp.add_parser(name, help=f"built-in plan: {blurb}")
        _add_common(sub, config=True)

    st = sp.add_parser("stream", help="run the joint update over a CSV")
    st.add_argument("input", type=Path, help="CSV stream (y column first)")
    st.add_argument("--k-hat", type=int, default=3,
                    help="tracked subspace dimension")
    st.add_argument("--m", type=int, default=5, help="mini-batch size")
    st.add_argument("--gamma", type=float, default=0.6,
                    help="SGD decay exponent")
    st.add_argument("--t-max", type=int, default=0,
                    help="step cap (0 runs the whole stream)")
    _add_common(st)

    rep = sp.add_parser("report", help="aggregate a summary.csv")
    rep.add_argument("summary", type=Path, help="summary.csv from a run")
    rep.add_argument("--out", type=Path, default=None,
                     help="directory for aggregate files")

    chk = sp.add_parser("check", help="run the invariant suite")
    chk.add_argument("--out", type=Path, default=None,
                     help="scratch directory for the end-to-end checks")
    return ap


def _apply_overrides(plan, args):
    kw = {}
    if args.out is not None:
        kw["out_dir"] = str(args.out)
    if args.reps is not None:
        kw["reps"] = args.reps
    if args.seed is not None:
        kw["seed_base"] = args.seed
    return replace(plan, **kw) if kw else plan


def _finish_plan(plan, args):
    rows = harness.run_plan(plan, workers=args.workers, resume=args.resume)
    out = Path(plan.out_dir)
    bad = [r for r in rows if r.error]
    print(f"{plan.name}: {len(rows)} runs -> {out / 'summary.csv'}")
    for r in bad:
        print(f"  failed: method={r.method} d={r.d} gamma={r.gamma} "
              f"rep={r.rep}: {r.error}", file=sys.stderr)
    paths = harness.report(out / "summary.csv")
    for kind in sorted(paths):
        print(f"  {kind}: {paths[kind]}")
    return 1 if bad else 0


def cmd_gen(args):
    build = datagen.linear_spec if args.response == "linear" \
        else datagen.additive_spec
    if args.noise_sd is None:
        spec = build(args.d, args.k, args.seed)
    else:
        spec = build(args.d, args.k, args.seed, noise_sd=args.noise_sd)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    datagen.write_csv(args.out, spec, args.n,
                      with_factors=args.with_factors)
    cols = 1 + args.d + (args.k if args.with_factors else 0)
    print(f"wrote {args.n} samples x {cols} columns to {args.out}")
    return 0


def cmd_run(args):
    plan = _apply_overrides(harness.parse_config(args.config), args)
    return _finish_plan(plan, args)


def cmd_builtin(args):
    if args.config is not None:
        plan = harness.parse_config(args.config)
    else:
        plan = harness.builtin_plan(args.command)
    return _finish_plan(_apply_overrides(plan, args), args)


def cmd_stream(args):
    sections = {
        "plan": {"name": args.input.stem, "task": "csv_stream",
                 "method": "fsgd", "reps": "1"},
        "run": {"csv_path": str(args.input), "k_hat": str(args.k_hat),
                "m": str(args.m), "gamma": str(args.gamma),
                "t_max": str(args.t_max)},
    }
    plan = _apply_overrides(harness.plan_from_sections(sections), args)
    if args.out is None:
        plan = replace(plan, out_dir=str(args.input.parent
                                         / f"{args.input.stem}_run"))
    rows = harness.run_plan(plan, workers=args.workers, resume=args.resume)
    for r in rows:
        if r.error:
            print(f"rep {r.rep} failed: {r.error}", file=sys.stderr)
        else:
            print(f"rep {r.rep}: final train loss "
                  f"{r.final_train_loss:.6g}")
    print(f"summary: {Path(plan.out_dir) / 'summary.csv'}")
    return 1 if any(r.error for r in rows) else 0


def cmd_report(args):
    paths = harness.report(args.summary, out_dir=args.out)
    for kind in sorted(paths):
        print(f"{kind}: {paths[kind]}")
    return 0


def cmd_check(args):
    checks = harness.self_check(args.out)
    width = max(len(name) for name, _, _ in checks)
    bad = 0
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name:<{width}}  {detail}")
        bad += not ok
    print(f"{len(checks) - bad}/{len(checks)} checks passed")
    return 1 if bad else 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    handler = {
        "gen": cmd_gen,
        "run": cmd_run,
        "sweep-d": cmd_builtin,
        "sweep-gamma": cmd_builtin,
        "nn-compare": cmd_builtin,
        "stream": cmd_stream,
        "report": cmd_report,
        "check": cmd_check,
    }[args.command]
    try:
        return handler(args)
    except FsgdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
