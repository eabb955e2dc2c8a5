"""Command line entry point: ``dpca run | sweep | ingest | check``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from dpca import experiments, theory
from dpca.errors import ConfigError, DPCAError


def _emit(text: str, out_dir, name: str) -> None:
    if out_dir is None:
        sys.stdout.write(text)
        return
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _report(label: str, res: experiments.RunResult) -> None:
    parts = [f"{m}: rho={res.mean(m):.4f}" for m in res.config.methods]
    if res.config.emit_ar:
        parts += [f"{m}: ar={res.mean(m, 'ar'):.4f}" for m in res.config.methods]
    errors = sum(r.error is not None for r in res.records)
    print(f"{label} m={res.config.m} N={res.config.N} " + ", ".join(parts)
          + (f" ({errors} error rows)" if errors else ""), file=sys.stderr)


def _configure(args) -> experiments.ExperimentConfig:
    cfg = experiments.load_config(args.config)
    updates = {}
    if args.center:
        updates["center"] = True
    if args.fail_fast:
        updates["fail_fast"] = True
    if args.timing:
        updates["timing"] = True
    if args.reps is not None:
        updates["reps"] = args.reps
    if args.seed is not None:
        updates["seed"] = args.seed
    return replace(cfg, **updates)


def cmd_run(args) -> int:
    cfg = _configure(args)
    res = experiments.run_experiment(cfg, threads=args.threads)
    _emit(res.to_csv(), args.out, "results.csv")
    if args.out:
        _emit(json.dumps(cfg.to_dict(), indent=2) + "\n", args.out, "config.json")
    _report("run", res)
    return 0


def cmd_sweep(args) -> int:
    base = _configure(args)
    key, values = experiments.parse_vary(args.vary)
    chunks = []
    for i, v in enumerate(values):
        cfg = experiments.with_override(base, key, v)
        res = experiments.run_experiment(cfg, threads=args.threads)
        chunks.append(res.to_csv(header=i == 0))
        _report(f"{key}={v}", res)
    _emit("".join(chunks), args.out, "sweep.csv")
    return 0


def cmd_ingest(args) -> int:
    names, data = experiments.read_numeric_csv(args.csv, args.features)
    p = len(names)
    chunks = []
    for i, m in enumerate(int(x) for x in str(args.machines).split(",")):
        recs = experiments.run_ingest(
            data, K=args.k, t=args.t, machines=m, reps=args.reps, seed=args.seed,
            split_fraction=args.split, standardize=not args.no_standardize,
            center=args.center, fail_fast=args.fail_fast,
        )
        n_train = int(round(args.split * data.shape[0]))
        chunks.append(experiments.records_to_csv(
            recs, K=args.k, mode="covariance", model=f"csv:{Path(args.csv).name}", p=p, m=m,
            N=n_train, t=args.t, timing=args.timing, header=i == 0,
        ))
        means = {meth: [r.ar for r in recs if r.method == meth and r.ar is not None]
                 for meth in experiments.METHODS}
        print(f"m={m} " + ", ".join(f"{k}: ar={sum(v) / len(v):.4f}" for k, v in means.items() if v),
              file=sys.stderr)
    _emit("".join(chunks), args.out, "ingest.csv")
    return 0


def cmd_check(args) -> int:
    if args.suite != "theory":
        raise ConfigError(f"unknown suite {args.suite!r}; only 'theory' exists")
    only = set(args.only.split(",")) if args.only else None
    results = theory.run_suite(args.out, only=only)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed", file=sys.stderr)
    return 1 if failed else 0


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", help="output directory (default: CSV on stdout)")
    p.add_argument("--threads", type=int, default=1, help="worker processes for replications")
    p.add_argument("--center", action="store_true", help="subtract local means, divide by n-1")
    p.add_argument("--fail-fast", action="store_true", help="abort on the first numeric failure")
    p.add_argument("--timing", action="store_true", help="fill the seconds column (breaks byte-level determinism)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpca", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment config")
    run.add_argument("--config", required=True, help="JSON or TOML experiment config")
    run.add_argument("--reps", type=int)
    run.add_argument("--seed", type=int)
    _common(run)
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run a config over a grid of one parameter")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--vary", required=True, help="e.g. m=3,30,90,300")
    sweep.add_argument("--reps", type=int)
    sweep.add_argument("--seed", type=int)
    _common(sweep)
    sweep.set_defaults(func=cmd_sweep)

    ing = sub.add_parser("ingest", help="AR evaluation on a numeric CSV file")
    ing.add_argument("--csv", required=True)
    ing.add_argument("--features", default="all", help="'all', 'first..last' or a comma list")
    ing.add_argument("--k", type=int, default=3)
    ing.add_argument("--t", type=float, default=0.005)
    ing.add_argument("--machines", default="1", help="machine count, or a comma list to sweep")
    ing.add_argument("--reps", type=int, default=1)
    ing.add_argument("--seed", type=int, default=0)
    ing.add_argument("--split", type=float, default=0.7, help="training fraction")
    ing.add_argument("--no-standardize", action="store_true")
    _common(ing)
    ing.set_defaults(func=cmd_ingest)

    chk = sub.add_parser("check", help="Monte-Carlo property checks")
    chk.add_argument("--suite", default="theory")
    chk.add_argument("--only", help="comma list of check names")
    chk.add_argument("--out")
    chk.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DPCAError as exc:
        print(f"dpca: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
