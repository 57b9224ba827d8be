#!/usr/bin/env python3
"""Desk-scale experiment: surrogate-guided search vs random search on the
synthetic benchmark, emitting top-3 curves as CSV (one column pair per
procedure). Mirrors the kind of series the full-scale runs report."""

import argparse
import sys
from pathlib import Path

import numpy as np

from seqnas.engine import SearchConfig, report_top3_curve, run_random_search, run_search
from seqnas.evaluators import SyntheticEvaluator
from seqnas.space import SearchSpaceConfig
from seqnas.surrogate import GbdtParams, PredictorConfig


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--bench-seed", type=int, default=0)
    parser.add_argument("--noise-std", type=float, default=0.01)
    parser.add_argument("--n-init", type=int, default=20)
    parser.add_argument("--iterations", type=int, default=10)
    parser.add_argument("--candidates", type=int, default=5)
    parser.add_argument("--out", default="-")
    args = parser.parse_args()

    space = SearchSpaceConfig()
    predictor = PredictorConfig(bag_count=4, gbdt=GbdtParams(trees=40, max_depth=3))
    cfg = SearchConfig(
        n_init=args.n_init, n_iter=10 * args.candidates,
        m_iterations=args.iterations, l_candidates=args.candidates, seed=args.seed,
    )
    budget = args.n_init + args.iterations * args.candidates
    evaluator = SyntheticEvaluator(space, bench_seed=args.bench_seed,
                                   noise_std=args.noise_std)

    print(f"running guided search ({budget} evaluations)...", file=sys.stderr)
    guided = run_search(cfg, space, predictor, evaluator)
    print(f"running random baseline ({budget} evaluations)...", file=sys.stderr)
    baseline = run_random_search(budget, False, cfg, space, evaluator)

    guided_curve = report_top3_curve(guided)
    random_curve = report_top3_curve(baseline)
    lines = ["t,guided_top3,random_top3"]
    for (t, g), (_, r) in zip(guided_curve, random_curve):
        lines.append(f"{t},{g!r},{r!r}")

    out = Path(args.out) if args.out != "-" else None
    text = "\n".join(lines) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)
        print(f"wrote {out}", file=sys.stderr)
    print(f"best guided:  {guided.best_record().score:.4f}", file=sys.stderr)
    print(f"best random:  {baseline.best_record().score:.4f}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
