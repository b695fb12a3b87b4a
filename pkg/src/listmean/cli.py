"""Command-line interface.

Subcommands: generate | estimate | verify | tournament | bench.
Exit codes: 0 success, 1 error, 2 empty candidate list.
LISTMEAN_THREADS caps parallelism; all randomness derives from --seed.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .datasets import AdversaryStrategy, generate, write_dataset
from .harness import (
    run_bench_files,
    run_estimate_files,
    run_tournament_files,
    run_verify_files,
)


def _parse_mean(text: str, d: int, seed: int) -> np.ndarray:
    if text.startswith("random:"):
        from . import rng as rng_mod
        norm = float(text.split(":", 1)[1])
        v = rng_mod.stream(seed, "cli-mean").standard_normal(d)
        return norm * v / np.linalg.norm(v)
    vals = np.asarray([float(t) for t in text.split(",")], dtype=float)
    if vals.shape != (d,):
        raise ValueError(f"mean has {vals.shape[0]} coordinates, expected {d}")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="listmean",
                                description="list-decodable Gaussian mean estimation")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset file")
    g.add_argument("--alpha", type=float, required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--mean", default="random:2.0",
                   help="comma-separated coordinates or random:NORM")
    g.add_argument("--adversary", default="far_cluster",
                   help="none|far_cluster|mirror|uniform_shell|duplicate_shift|lb_construction")
    g.add_argument("--adversary-params", default="{}",
                   help="JSON object with kind-specific parameters")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    e = sub.add_parser("estimate", help="run the estimator on a dataset file")
    e.add_argument("dataset")
    e.add_argument("--config", required=True, help="pipeline config JSON file")
    e.add_argument("--out", required=True)
    e.add_argument("--weights-out", default=None,
                   help="optional sidecar file for full weight vectors")

    v = sub.add_parser("verify", help="Monte-Carlo geometry verification")
    v.add_argument("centers", help="JSON file {centers: [[..]], beta: x}")
    v.add_argument("--samples", type=int, default=1_000_000)
    v.add_argument("--fattening-trials", type=int, default=10_000)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", required=True)

    t = sub.add_parser("tournament", help="semi-verified selection from a list")
    t.add_argument("list", help="candidate list JSON (or estimate output)")
    t.add_argument("trusted", help="dataset file with trusted samples")
    t.add_argument("--eps", type=float, required=True)
    t.add_argument("--delta", type=float, default=0.05)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)

    b = sub.add_parser("bench", help="sweep a config matrix, emit CSV")
    b.add_argument("matrix", help="JSON file {configs: [...], seeds: [...]}")
    b.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "generate":
            mean = _parse_mean(args.mean, args.d, args.seed)
            adv = AdversaryStrategy(kind=args.adversary,
                                    params=json.loads(args.adversary_params))
            ds = generate(args.alpha, args.n, args.d, mean, adv, args.seed)
            write_dataset(args.out, ds)
            return 0
        if args.command == "estimate":
            return run_estimate_files(args.dataset, args.config, args.out,
                                      weights_out=args.weights_out)
        if args.command == "verify":
            return run_verify_files(args.centers, args.samples, args.seed,
                                    args.out,
                                    fattening_trials=args.fattening_trials)
        if args.command == "tournament":
            return run_tournament_files(args.list, args.trusted, args.eps,
                                        args.delta, args.out, seed=args.seed)
        if args.command == "bench":
            return run_bench_files(args.matrix, args.out)
        raise AssertionError("unreachable")
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"listmean: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
