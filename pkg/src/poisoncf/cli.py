"""Command-line entry point: ``poisoncf {gen,attack,sweep,eval,gradcheck}``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from .data import DataFormatError, generate_synthetic, load_malicious, save_ratings
from .experiment import (RESULT_COLUMNS, evaluate, load_config, prepare, run_cell,
                         run_experiment)
from .gradcheck import check_als, check_nuclear


def _overrides(args) -> dict:
    values = {}
    for item in args.set or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        values[key.strip()] = value
    if args.seed is not None:
        values["seed"] = str(args.seed)
    if getattr(args, "workers", None) is not None:
        values["workers"] = str(args.workers)
    if getattr(args, "out", None) is not None:
        values["output_dir"] = args.out
    return values


def _config(args):
    return load_config(args.config, _overrides(args))


def cmd_gen(args) -> int:
    M, truth = generate_synthetic(args.m, args.n, args.rank, args.obs, args.noise,
                                  0 if args.seed is None else args.seed, args.popularity)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_ratings(M, out)
    if args.truth:
        np.save(args.truth, truth)
    print(f"wrote {M.nnz} ratings ({M.num_users} users x {M.num_items} items) to {out}")
    return 0


def cmd_attack(args) -> int:
    cfg = _config(args)
    ctx = prepare(cfg)
    row, mt, _ = run_cell(ctx, (args.alpha, args.attack, args.beta, cfg.seed))
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        writer.writeheader()
        writer.writerow(row)
    if mt is not None:
        save_ratings(mt, out / "malicious.csv")
    print(json.dumps(row))
    return 1 if row["error"] else 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    rows = run_experiment(cfg)
    failed = sum(1 for r in rows if r["error"])
    print(f"{len(rows)} cells written to {Path(cfg.output_dir) / 'results.csv'}"
          + (f" ({failed} failed)" if failed else ""))
    return 1 if failed else 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    ctx = prepare(cfg)
    mt = load_malicious(args.malicious)
    if mt.num_items != ctx.M.num_items:
        raise DataFormatError(f"{args.malicious}: {mt.num_items} items, dataset has {ctx.M.num_items}")
    metrics = evaluate(ctx, mt)
    metrics["target_item"] = ctx.target
    print(json.dumps(metrics))
    return 0


def cmd_gradcheck(args) -> int:
    base = 0 if args.seed is None else args.seed
    worst = 0.0
    for seed in range(base, base + args.instances):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            if args.solver == "als":
                res = check_als(seed, lam=args.lam if args.lam is not None else 0.1)
            else:
                res = check_nuclear(seed, lam=args.lam if args.lam is not None else 1.0,
                                    tau=args.tau, sigma_path=args.sigma_path)
        worst = max(worst, res.rel_error)
        print(f"seed {seed}: relative error {res.rel_error:.3e}")
    print(f"worst {worst:.3e} (threshold {args.threshold:g})")
    return 0 if worst <= args.threshold else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poisoncf", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help="output directory"):
        p.add_argument("--config", help="flat key = value configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a configuration value (repeatable)")
        p.add_argument("--seed", type=int, help="global seed")
        p.add_argument("--out", help=out_help)

    p = sub.add_parser("gen", help="generate a synthetic rating matrix")
    p.add_argument("--m", type=int, default=200)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--rank", type=int, default=5)
    p.add_argument("--obs", type=float, default=0.3)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--popularity", type=float, default=0.0,
                   help="power-law exponent of item popularity (0 = uniform)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="ratings CSV to write")
    p.add_argument("--truth", help="optional .npy file for the ground-truth matrix")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("attack", help="run a single attack cell")
    common(p)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--attack", choices=("pga", "sgld", "uniform"), required=True)
    p.add_argument("--beta", type=float, default=0.6)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("sweep", help="run the configured grid of attack cells")
    common(p)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="score a saved malicious block")
    common(p)
    p.add_argument("malicious", help="malicious ratings CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="compare attack gradients with finite differences")
    p.add_argument("--solver", choices=("als", "nuclear"), default="als")
    p.add_argument("--instances", type=int, default=10)
    p.add_argument("--lam", type=float)
    p.add_argument("--tau", type=float, default=1e-3)
    p.add_argument("--sigma-path", action="store_true")
    p.add_argument("--threshold", type=float, default=1e-2)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "attack" and args.attack != "sgld":
        args.beta = None
    try:
        return args.func(args)
    except (DataFormatError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
