#!/usr/bin/env python3
"""Compare the two predictor kinds (bagged LAD trees vs MLP ensemble) on a
synthetic bench table: held-out MAE at several training sizes."""

import argparse
import sys

import numpy as np

from seqnas.benchdata import synthesize_bench_records, to_surrogate_dataset
from seqnas.space import SearchSpaceConfig
from seqnas.surrogate import MlpParams, PredictorConfig, eval_mae, fit


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--records", type=int, default=600)
    parser.add_argument("--holdout", type=int, default=150)
    args = parser.parse_args()

    space = SearchSpaceConfig()
    records = synthesize_bench_records(space, "demo", "ours", args.records,
                                       seed=args.seed, noise_std=0.01)
    X, y = to_surrogate_dataset(records)
    Xte, yte = X[-args.holdout:], y[-args.holdout:]
    configs = {
        "gbdt-bag": PredictorConfig(kind="gbdt-bag"),
        "mlp-ensemble": PredictorConfig(kind="mlp-ensemble",
                                        mlp=MlpParams(hidden=(64,), epochs=120, members=8)),
    }

    print("train_size,kind,holdout_mae")
    for size in (50, 100, 200, 400):
        if size + args.holdout > args.records:
            break
        for kind, cfg in configs.items():
            model = fit(X[:size], y[:size], cfg, np.random.default_rng(args.seed))
            print(f"{size},{kind},{eval_mae(model, Xte, yte)!r}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
