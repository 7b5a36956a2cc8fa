"""Command-line entry point: ``pvgan <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import gradcheck as gc
from . import losses, metrics
from .harness import ConfigError, SyntheticDataset, TrainingAborted, load_config, sample_dataset, train
from .tensor import Shape3d, write_pvt


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=1)
    sys.stdout.write("\n")


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.report:
        cfg = cfg.replace(report_path=args.report)
    try:
        report = train(cfg)
    except TrainingAborted as exc:
        logging.error("training aborted: %s", exc)
        _emit({"aborted": True, "reason": str(exc)})
        return 2
    _emit(report.get("final", {"step": 0}))
    return 0


def cmd_schedule(args) -> int:
    _emit(load_config(args.config).schedule().phase_table())
    return 0


def cmd_gradcheck(args) -> int:
    names = args.ops.split(",") if args.ops else sorted(gc.OP_CASES)
    results = [gc.check_op(n, probes=args.probes, eps=args.eps, seed=args.seed) for n in names]
    if args.networks:
        results += [gc.check_network(r, probes=args.probes, eps=args.eps, seed=args.seed)
                    for r in ("generator", "discriminator")]
    rows = [{"name": r.name, "probes": r.probes, "max_rel_err": r.max_rel_err, "passed": r.passed(args.tol)}
            for r in results]
    _emit(rows)
    return 0 if all(r["passed"] for r in rows) else 1


def cmd_gen_data(args) -> int:
    ds = SyntheticDataset(args.kind, rung=Shape3d.parse(args.rung), max_speed=args.max_speed)
    x = sample_dataset(ds, args.n, args.seed)
    write_pvt(args.out, x)
    _emit({"kind": args.kind, "shape": list(x.shape), "out": args.out})
    return 0


def cmd_metrics(args) -> int:
    if args.metric == "is":
        p = metrics.load_matrix(args.probs)
        value, n = metrics.inception_score(p, splits=args.splits), len(p)
    elif args.metric == "fid":
        real, fake = metrics.load_matrix(args.real), metrics.load_matrix(args.fake)
        value = metrics.frechet_distance(metrics.gaussian_stats(real), metrics.gaussian_stats(fake))
        n = len(fake)
    else:
        real, fake = metrics.load_matrix(args.real), metrics.load_matrix(args.fake)
        value, n = losses.swd(real, fake, args.projections, seed=args.seed), len(fake)
    _emit({"metric": args.metric, "value": value, "n_samples": n})
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pvgan", description="Progressive video GAN toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a training job from a key=value config")
    p.add_argument("--config", required=True)
    p.add_argument("--report", help="override report_path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("schedule", help="dump the growth phase table as JSON")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("gradcheck", help="finite-difference check of op gradients")
    p.add_argument("--ops", help="comma-separated op names (default: all)")
    p.add_argument("--networks", action="store_true", help="also check both networks at the first rung")
    p.add_argument("--probes", type=int, default=100)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("gen-data", help="write synthetic samples to a PVT1 file")
    p.add_argument("--kind", required=True, choices=["gauss_mix_2d", "moving_dot_video"])
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rung", default="8x16x16", help="clip extents TxHxW for videos")
    p.add_argument("--max-speed", type=int, default=1)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("metrics", help="IS, FID or SWD from externally produced matrices")
    msub = p.add_subparsers(dest="metric", required=True)
    m = msub.add_parser("is")
    m.add_argument("--probs", required=True)
    m.add_argument("--splits", type=int, default=1)
    for name in ("fid", "swd"):
        m = msub.add_parser(name)
        m.add_argument("--real", required=True)
        m.add_argument("--fake", required=True)
        if name == "swd":
            m.add_argument("--projections", type=int, default=128)
            m.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_metrics)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"pvgan: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
