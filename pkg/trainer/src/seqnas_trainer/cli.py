"""Trainer CLI: serve the protocol or generate a synthetic dataset."""

from __future__ import annotations

import argparse
import sys

from .data import generate_synthetic_evs, write_dataset
from .protocol import build_server
from .schema import EvsSchema, TrainRunConfig


def cmd_serve(args) -> int:
    run_cfg = TrainRunConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        val_fraction=args.val_fraction,
        device=args.device,
    )
    server = build_server(args.data, args.space_config, args.cache_dir, run_cfg)
    if args.tcp:
        host, _, port = args.tcp.rpartition(":")
        server.serve_tcp(host or "127.0.0.1", int(port))
    else:
        server.serve_stdio()
    return 0


def cmd_gen_data(args) -> int:
    schema = EvsSchema(
        categorical=tuple((f"cat{i}", c) for i, c in
                          enumerate(int(x) for x in args.cat_cards.split(","))),
        numeric=tuple(f"num{i}" for i in range(args.num_features)),
        seq_len=args.seq_len,
        n_classes=args.classes,
    )
    dataset = generate_synthetic_evs(schema, args.n, args.seed)
    write_dataset(args.out, dataset)
    rate = dataset.labels.mean()
    print(f"wrote {len(dataset)} sequences to {args.out} (positive rate {rate:.3f})",
          file=sys.stderr)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="seqnas-trainer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="serve the external-trainer protocol")
    p.add_argument("--data", required=True, help="dataset file (see gen-data)")
    p.add_argument("--space-config", required=True,
                   help="search-space config JSON shared with the engine")
    p.add_argument("--cache-dir", required=True,
                   help="shared prediction-cache directory")
    p.add_argument("--tcp", default=None, help="HOST:PORT (default: stdio)")
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--device", default="cpu")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("gen-data", help="generate a planted-signal dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seq-len", type=int, default=20)
    p.add_argument("--cat-cards", default="8", help="comma-separated cardinalities")
    p.add_argument("--num-features", type=int, default=1)
    p.add_argument("--classes", type=int, default=2)
    p.set_defaults(func=cmd_gen_data)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
