"""Command-line surface. Reports are machine-readable (CSV/JSON); logs go to
stderr; every source of randomness flows from an explicit --seed."""

from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import avec, benchdata, engine, evaluators, space, surrogate

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

STATE_DIR_ENV = "SEQNAS_STATE_DIR"


class CliError(RuntimeError):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _load_space(args) -> space.SearchSpaceConfig:
    if getattr(args, "space", None):
        return space.load_space_config(args.space)
    preset = getattr(args, "preset", None) or "default"
    ref = resources.files("seqnas.presets").joinpath(f"{preset}.json")
    if not ref.is_file():
        return space.get_preset(preset)
    return space.SearchSpaceConfig.from_dict(json.loads(ref.read_text()))


def _out_stream(args):
    out = getattr(args, "out", None)
    if out in (None, "-"):
        return sys.stdout, False
    return open(out, "w", encoding="utf-8"), True


def _write_lines(args, lines) -> None:
    stream, owned = _out_stream(args)
    try:
        for line in lines:
            stream.write(line + "\n")
    finally:
        if owned:
            stream.close()


def _read_spec(args) -> space.ArchitectureSpec:
    if args.spec == "-":
        payload = sys.stdin.read()
    else:
        payload = Path(args.spec).read_text(encoding="utf-8")
    return space.ArchitectureSpec.from_dict(json.loads(payload))


def _state_dir(args, required=True) -> Path | None:
    value = getattr(args, "state_dir", None) or os.environ.get(STATE_DIR_ENV)
    if value is None and required:
        raise CliError("usage", f"--state-dir (or ${STATE_DIR_ENV}) is required")
    return Path(value) if value is not None else None


def _fmt_float(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------- subcommands


def cmd_sample(args) -> int:
    cfg = _load_space(args)
    rng = np.random.default_rng(args.seed)
    lines = []
    for _ in range(args.count):
        spec = space.sample_architecture(cfg, rng, args.mode)
        lines.append(space.canonical_spec_bytes(spec).decode("utf-8"))
    _write_lines(args, lines)
    return EXIT_OK


def cmd_encode(args) -> int:
    cfg = _load_space(args)
    vec = avec.encode(_read_spec(args), cfg)
    _write_lines(args, [vec.to01()])
    return EXIT_OK


def cmd_decode(args) -> int:
    cfg = _load_space(args)
    layout = avec.feature_layout(cfg)
    text = args.avec if args.avec != "-" else sys.stdin.read().strip()
    spec = avec.decode(avec.FeatureVector.from01(text, layout), cfg)
    _write_lines(args, [space.canonical_spec_bytes(spec).decode("utf-8")])
    return EXIT_OK


def cmd_cardinality(args) -> int:
    _write_lines(args, [str(space.cardinality(_load_space(args)))])
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _load_space(args)
    violations = space.validate_spec(_read_spec(args), cfg)
    if not violations:
        _write_lines(args, ["ok"])
        return EXIT_OK
    _write_lines(args, violations)
    return EXIT_RUNTIME


def _load_run_config(args):
    if not args.config:
        raise CliError("usage", "--config is required for this subcommand")
    with open(args.config, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    search_cfg = engine.SearchConfig.from_dict(doc.get("search", {}))
    if args.seed is not None:
        from dataclasses import replace

        search_cfg = replace(search_cfg, seed=args.seed)
    if "space" in doc and isinstance(doc["space"], dict):
        space_cfg = space.SearchSpaceConfig.from_dict(doc["space"])
    else:
        space_cfg = space.get_preset(doc.get("space", "default"))
    pred_cfg = surrogate.PredictorConfig.from_dict(doc.get("predictor", {}))
    return doc, search_cfg, space_cfg, pred_cfg


def _build_evaluator(doc, space_cfg):
    ev = doc.get("evaluator", {"kind": "synthetic"})
    kind = ev.get("kind", "synthetic")
    if kind == "synthetic":
        return evaluators.SyntheticEvaluator(
            space_cfg, bench_seed=ev.get("bench_seed", 0),
            noise_std=ev.get("noise_std", 0.0))
    if kind == "bench":
        records, _ = benchdata.read_bench(ev["path"])
        dataset = ev.get("dataset")
        if dataset is not None:
            records = [r for r in records if r.dataset == dataset]
        return evaluators.BenchLookupEvaluator(records, space_cfg)
    if kind == "external":
        return evaluators.ExternalEvaluator(
            space_cfg,
            command=ev.get("command"),
            address=ev.get("address"),
            timeout=ev.get("timeout", 3600.0),
            retries=ev.get("retries", 2),
        )
    raise CliError("config", f"unknown evaluator kind {kind!r}")


def _dry_run_plan(doc, search_cfg, space_cfg, pred_cfg, procedure, budget=None) -> str:
    plan = {
        "procedure": procedure,
        "search": search_cfg.to_dict(),
        "space": space_cfg.to_dict(),
        "predictor": pred_cfg.to_dict(),
        "evaluator": doc.get("evaluator", {"kind": "synthetic"}),
        "space_cardinality": space.cardinality(space_cfg),
        "planned_evaluations": (
            budget if budget is not None
            else search_cfg.n_init + search_cfg.m_iterations * search_cfg.l_candidates),
    }
    return json.dumps(plan, indent=2, sort_keys=True)


def cmd_search(args) -> int:
    doc, search_cfg, space_cfg, pred_cfg = _load_run_config(args)
    if args.dry_run:
        search_cfg.validate()
        space_cfg.validate()
        pred_cfg.validate()
        _write_lines(args, [_dry_run_plan(doc, search_cfg, space_cfg, pred_cfg, "search")])
        return EXIT_OK
    evaluator = _build_evaluator(doc, space_cfg)
    state = engine.run_search(search_cfg, space_cfg, pred_cfg, evaluator,
                              state_dir=_state_dir(args))
    best = state.best_record()
    print(f"completed: {len(state.records)} records, best {best.score} ({best.arch_id})",
          file=sys.stderr)
    return EXIT_OK


def cmd_random_search(args) -> int:
    doc, search_cfg, space_cfg, pred_cfg = _load_run_config(args)
    if args.dry_run:
        search_cfg.validate()
        space_cfg.validate()
        _write_lines(args, [_dry_run_plan(doc, search_cfg, space_cfg, pred_cfg,
                                          "random", budget=args.budget)])
        return EXIT_OK
    evaluator = _build_evaluator(doc, space_cfg)
    state = engine.run_random_search(args.budget, args.kd, search_cfg, space_cfg,
                                     evaluator, state_dir=_state_dir(args),
                                     predictor=pred_cfg)
    best = state.best_record()
    print(f"completed: {len(state.records)} records, best {best.score} ({best.arch_id})",
          file=sys.stderr)
    return EXIT_OK


def cmd_resume(args) -> int:
    state_dir = _state_dir(args)
    persisted = engine.load_state(state_dir)
    with open(args.config, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    evaluator = _build_evaluator(doc, persisted.space)
    state = engine.resume(state_dir, evaluator)
    print(f"completed: {len(state.records)} records", file=sys.stderr)
    return EXIT_OK


def cmd_report(args) -> int:
    state = engine.load_state(_state_dir(args))
    if args.curve != "top3":
        raise CliError("usage", f"unknown curve {args.curve!r}")
    curve = engine.report_top3_curve(state, k=args.k)
    lines = ["t,value"] + [f"{t},{_fmt_float(v)}" for t, v in curve]
    _write_lines(args, lines)
    return EXIT_OK


def cmd_bench_import(args) -> int:
    cfg = _load_space(args)
    layout = avec.feature_layout(cfg)
    records, header = benchdata.read_bench(args.input)
    problems = benchdata.validate_against_space(records, cfg)
    if problems:
        raise CliError("bench", "; ".join(problems[:5]))
    benchdata.write_bench(args.out, records, layout.fingerprint)
    print(f"imported {len(records)} records", file=sys.stderr)
    return EXIT_OK


def cmd_bench_export(args) -> int:
    records, _ = benchdata.read_bench(args.input)
    lines = [json.dumps(r.to_dict(), sort_keys=True) for r in records]
    _write_lines(args, lines)
    return EXIT_OK


def cmd_bench_histogram(args) -> int:
    records, _ = benchdata.read_bench(args.input)
    if args.dataset:
        records = [r for r in records if r.dataset == args.dataset]
    if args.method:
        records = [r for r in records if r.method == args.method]
    bins = benchdata.histogram(records, args.bins)
    lines = ["bin_lower,count"] + [f"{_fmt_float(lo)},{c}" for lo, c in bins]
    _write_lines(args, lines)
    return EXIT_OK


def cmd_bench_to_surrogate(args) -> int:
    records, _ = benchdata.read_bench(args.input)
    X, y = benchdata.to_surrogate_dataset(records)
    if not args.out:
        raise CliError("usage", "--out is required (binary output)")
    np.savez(args.out, features=X, scores=y)
    print(f"wrote {X.shape[0]}x{X.shape[1]} features to {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_synthbench_make(args) -> int:
    cfg = _load_space(args)
    layout = avec.feature_layout(cfg)
    records = []
    for dataset in args.datasets.split(","):
        records.extend(benchdata.synthesize_bench_records(
            cfg, dataset.strip(), args.method, args.count, seed=args.seed,
            noise_std=args.noise_std))
    if not args.out:
        raise CliError("usage", "--out is required")
    benchdata.write_bench(args.out, records, layout.fingerprint)
    print(f"wrote {len(records)} records to {args.out}", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _add_space_flags(p):
    p.add_argument("--preset", default=None, help="built-in search-space preset name")
    p.add_argument("--space", default=None, help="search-space config JSON file")


def _add_common_flags(p, out=True):
    p.add_argument("--seed", type=int, default=0)
    if out:
        p.add_argument("--out", default=None, help="output file (default stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqnas",
        description="Predictor-based architecture search for event-sequence classifiers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="sample architectures from the space")
    _add_space_flags(p)
    _add_common_flags(p)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--mode", choices=list(space.SAMPLING_MODES), default="per-factor")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("encode", help="encode a spec into its binary feature vector")
    _add_space_flags(p)
    _add_common_flags(p)
    p.add_argument("--spec", required=True, help="spec JSON file, or - for stdin")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decode a binary feature vector into a spec")
    _add_space_flags(p)
    _add_common_flags(p)
    p.add_argument("--avec", required=True, help="0/1 string, or - for stdin")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("cardinality", help="exact size of the search space")
    _add_space_flags(p)
    _add_common_flags(p)
    p.set_defaults(func=cmd_cardinality)

    p = sub.add_parser("validate", help="check a spec against a space config")
    _add_space_flags(p)
    _add_common_flags(p)
    p.add_argument("--spec", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("search", help="run the surrogate-guided search")
    _add_common_flags(p, out=True)
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--state-dir", default=None)
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(func=cmd_search)
    p.set_defaults(seed=None)

    p = sub.add_parser("random-search", help="run the random-search baseline")
    _add_common_flags(p, out=True)
    p.add_argument("--config", required=True)
    p.add_argument("--state-dir", default=None)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--kd", action="store_true", help="enable teacher ensembles")
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(func=cmd_random_search)
    p.set_defaults(seed=None)

    p = sub.add_parser("resume", help="continue an interrupted run")
    p.add_argument("--state-dir", default=None)
    p.add_argument("--config", required=True,
                   help="run config (for the evaluator definition)")
    p.set_defaults(func=cmd_resume)

    p = sub.add_parser("report", help="emit figure-style series from a run")
    p.add_argument("--state-dir", default=None)
    p.add_argument("--curve", default="top3")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)

    bench = sub.add_parser("bench", help="bench dataset tooling")
    bench_sub = bench.add_subparsers(dest="bench_command", required=True)

    p = bench_sub.add_parser("import", help="validate + normalize a bench file")
    _add_space_flags(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench_import)

    p = bench_sub.add_parser("export", help="dump records as plain JSONL")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench_export)

    p = bench_sub.add_parser("histogram", help="score histogram (CSV)")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--dataset", default=None)
    p.add_argument("--method", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench_histogram)

    p = bench_sub.add_parser("to-surrogate", help="convert to (features, scores) arrays")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench_to_surrogate)

    synth = sub.add_parser("synthbench", help="synthetic bench dataset tooling")
    synth_sub = synth.add_subparsers(dest="synth_command", required=True)

    p = synth_sub.add_parser("make", help="evaluate sampled archs into a bench file")
    _add_space_flags(p)
    _add_common_flags(p, out=True)
    p.add_argument("--datasets", default="synthetic")
    p.add_argument("--method", choices=list(benchdata.METHODS), default="ours")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--noise-std", type=float, default=0.0)
    p.set_defaults(func=cmd_synthbench_make)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except CliError as exc:
        print(json.dumps({"error": exc.code, "message": str(exc)}), file=sys.stderr)
        return EXIT_USAGE if exc.code == "usage" else EXIT_RUNTIME
    except (space.ConfigError, space.SpecError, avec.DecodeError,
            benchdata.BenchFormatError, surrogate.SurrogateError,
            engine.EngineError, evaluators.EvaluationError,
            FileNotFoundError, json.JSONDecodeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
