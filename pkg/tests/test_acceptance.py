"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line
with its runtime. Tolerances are pinned here, not configurable."""

import functools
import time

import numpy as np
import pytest

from seqnas.avec import decode, encode, feature_layout
from seqnas.benchdata import read_bench, synthesize_bench_records, write_bench
from seqnas.engine import SearchConfig, load_state, resume, run_random_search, run_search
from seqnas.evaluators import EvaluationError, SyntheticEvaluator
from seqnas.selector import SelectionRequest, thompson_select
from seqnas.space import (
    SearchSpaceConfig,
    canonical_id,
    cardinality,
    enumerate_layer_variants,
    get_preset,
    sample_architecture,
)
from seqnas.surrogate import (
    GbdtParams,
    PredictorConfig,
    ScorePrediction,
    eval_mae,
    fit,
    init_mlp_member,
    mlp_loss_and_grad,
    predict,
)


def criterion(name, limit_seconds):
    """Times the check and prints one PASS/FAIL line."""

    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            start = time.monotonic()
            try:
                fn(*args, **kwargs)
            except BaseException:
                elapsed = time.monotonic() - start
                print(f"FAIL {name} ({elapsed:.1f}s)")
                raise
            elapsed = time.monotonic() - start
            print(f"PASS {name} ({elapsed:.1f}s)")
            assert elapsed < limit_seconds, f"{name} exceeded {limit_seconds}s budget"

        return run

    return wrap


@criterion("cardinality: encoder 130,701 exact; paper preset 4,705,272 (~5e6)", 1.0)
def test_cardinality_criterion():
    default = SearchSpaceConfig()
    variants = enumerate_layer_variants(default)
    brute = sum(
        len(variants) ** count for count in default.encoder_layer_count_options
    )
    closed = sum(19 ** c for c in (1, 2, 4))
    assert brute == closed == 130_701

    paper_total = cardinality(get_preset("paper"))
    assert paper_total == 4_705_272
    assert abs(paper_total - 5e6) / 5e6 < 0.06


@criterion("layer variants: exactly 19 distinct under defaults", 1.0)
def test_layer_variants_criterion():
    variants = enumerate_layer_variants(SearchSpaceConfig())
    assert len(variants) == 19
    assert len(set(variants)) == 19


@criterion("avec: decode-encode identity, injectivity and zeroing over 10,000 samples", 10.0)
def test_avec_criterion():
    cfg = SearchSpaceConfig()
    lay = feature_layout(cfg)
    regions = {
        "encoder": [i for i, (n, _) in enumerate(lay.slots) if n.startswith("encoder.")],
        "decoder": [i for i, (n, _) in enumerate(lay.slots) if n.startswith("decoder.")],
    }
    rng = np.random.default_rng(2025)
    seen_vectors = {}
    n_distinct_specs = 0
    for _ in range(10_000):
        spec = sample_architecture(cfg, rng)
        vec = encode(spec, cfg, lay)
        assert decode(vec, cfg) == spec
        key = vec.to01()
        if key not in seen_vectors:
            n_distinct_specs += 1
            seen_vectors[key] = spec
        else:
            assert seen_vectors[key] == spec  # identical spec, not a collision
        if spec.encoder is None:
            assert all(vec.bits[i] == 0 for i in regions["encoder"])
        else:
            for pos in range(len(spec.encoder), len(lay.layer_slots)):
                assert all(vec.bits[i] == 0 for i in lay.layer_slots[pos].all_indices())
        if spec.decoder is None:
            assert all(vec.bits[i] == 0 for i in regions["decoder"])
    assert len(seen_vectors) == n_distinct_specs  # zero digest/vector collisions


@criterion("thompson: two-candidate frequency 0.760 +/- 0.02; sigma=0 greedy", 5.0)
def test_thompson_criterion():
    req = SelectionRequest(
        predictions=[ScorePrediction(0.0, 1.0), ScorePrediction(1.0, 1.0)], count=1)
    rng = np.random.default_rng(777)
    wins = sum(thompson_select(req, rng)[0] == 1 for _ in range(10_000))
    assert abs(wins / 10_000 - 0.760) < 0.02

    greedy = thompson_select(
        SelectionRequest(predictions=[ScorePrediction(m, 0.0) for m in
                                      (0.2, 0.9, 0.1, 0.7, 0.4)], count=3),
        np.random.default_rng(0))
    assert greedy == [1, 3, 4]


@criterion("surrogate: MAE <= 0.5x baseline; std shrinks 50->500; gradcheck 1e-4", 120.0)
def test_surrogate_criterion():
    cfg = SearchSpaceConfig()
    lay = feature_layout(cfg)
    rng = np.random.default_rng(424)
    w = rng.normal(0, 0.5, len(lay))
    X, y, seen = [], [], set()
    while len(X) < 1000:
        spec = sample_architecture(cfg, rng)
        vec = encode(spec, cfg, lay)
        if vec.to01() in seen:
            continue
        seen.add(vec.to01())
        phi = vec.as_array()
        X.append(phi)
        y.append(float(phi @ w) + rng.normal(0, 0.02))
    X, y = np.asarray(X), np.asarray(y)

    Xtr, ytr, Xte, yte = X[:300], y[:300], X[300:400], y[300:400]
    baseline = float(np.mean(np.abs(yte - np.median(ytr))))
    model = fit(Xtr, ytr, PredictorConfig(), np.random.default_rng(1))
    assert eval_mae(model, Xte, yte) <= 0.5 * baseline

    probe = X[400:450]
    small = fit(X[:50], y[:50], PredictorConfig(), np.random.default_rng(2))
    large = fit(X[:500], y[:500], PredictorConfig(), np.random.default_rng(2))
    std_small = np.mean([p.std for p in predict(small, probe)])
    std_large = np.mean([p.std for p in predict(large, probe)])
    assert std_large < std_small

    grad_rng = np.random.default_rng(3)
    for widths in [(6,), (8, 4)]:
        n_in = int(grad_rng.integers(4, 20))
        member = init_mlp_member(n_in, widths, grad_rng)
        Xg = grad_rng.integers(0, 2, size=(10, n_in)).astype(float)
        yg = grad_rng.normal(0, 1, 10)
        _, gw, gb = mlp_loss_and_grad(member, Xg, yg)
        analytic = np.concatenate([g.ravel() for g in gw] + [g.ravel() for g in gb])
        fd = []
        h = 1e-6
        for arr in member.weights + member.biases:
            flat = arr.ravel()
            for k in range(flat.size):
                old = flat[k]
                flat[k] = old + h
                up, _, _ = mlp_loss_and_grad(member, Xg, yg)
                flat[k] = old - h
                dn, _, _ = mlp_loss_and_grad(member, Xg, yg)
                flat[k] = old
                fd.append((up - dn) / (2 * h))
        fd = np.asarray(fd)
        denom = max(np.linalg.norm(analytic), np.linalg.norm(fd), 1e-12)
        assert np.linalg.norm(analytic - fd) / denom < 1e-4


@criterion("bookkeeping: 700 records, no duplicates, disjoint batches, resume equality", 120.0)
def test_bookkeeping_criterion(tmp_path):
    space = SearchSpaceConfig()
    light = PredictorConfig(bag_count=3, gbdt=GbdtParams(trees=20, max_depth=3))

    class RecordingEvaluator:
        def __init__(self, inner):
            self.inner = inner
            self.request_ids = []

        def evaluate(self, req):
            self.request_ids.append(req.arch_id)
            return self.inner.evaluate(req)

    # stock defaults: 100 initial + 40 iterations x 15 candidates
    ev = RecordingEvaluator(SyntheticEvaluator(space, bench_seed=0))
    state = run_search(SearchConfig(seed=1), space, light, ev)
    assert len(state.records) == 100 + 40 * 15 == 700
    ids = [r.arch_id for r in state.records]
    assert len(set(ids)) == 700
    assert len(set(ev.request_ids)) == len(ev.request_ids)  # nothing trained twice

    # kill-and-resume at scaled config, parallelism 1
    scaled = SearchConfig(n_init=10, n_iter=20, m_iterations=5, l_candidates=4, seed=9)
    full = run_search(scaled, space, light, SyntheticEvaluator(space, 5),
                      state_dir=tmp_path / "full")

    class Dying:
        def __init__(self, inner, fail_from):
            self.inner, self.calls, self.fail_from = inner, 0, fail_from

        def evaluate(self, req):
            self.calls += 1
            if self.calls >= self.fail_from:
                raise RuntimeError("killed")
            return self.inner.evaluate(req)

    with pytest.raises(EvaluationError):
        run_search(scaled, space, light, Dying(SyntheticEvaluator(space, 5), 20),
                   state_dir=tmp_path / "part")
    assert len(load_state(tmp_path / "part").records) < len(full.records)
    resumed = resume(tmp_path / "part", SyntheticEvaluator(space, 5))
    assert [(r.arch_id, r.score) for r in resumed.records] == \
           [(r.arch_id, r.score) for r in full.records]


@criterion("search beats random at equal 70-evaluation budget (5 seeds)", 300.0)
def test_search_beats_random_criterion():
    space = SearchSpaceConfig()
    pred = PredictorConfig(bag_count=4, gbdt=GbdtParams(trees=30, max_depth=3))
    search_best, random_best = [], []
    for seed in range(5):
        cfg = SearchConfig(n_init=20, n_iter=50, m_iterations=10, l_candidates=5,
                           seed=seed)
        ev = SyntheticEvaluator(space, bench_seed=100 + seed, noise_std=0.01)
        search_best.append(run_search(cfg, space, pred, ev).best_record().score)
        random_best.append(
            run_random_search(70, False, cfg, space, ev).best_record().score)
    assert np.mean(search_best) >= np.mean(random_best)


@criterion("bench I/O: bit-exact round trip; 3,200-record table structure", 10.0)
def test_bench_io_criterion(tmp_path):
    cfg = SearchSpaceConfig()
    lay = feature_layout(cfg)
    records = []
    for ds in ("rbchurn", "abank", "amex", "age", "vbank", "taobao"):
        records += synthesize_bench_records(cfg, ds, "ours", 400, seed=1)
    for ds in ("rbchurn", "abank"):
        records += synthesize_bench_records(cfg, ds, "random", 400, seed=2)
    assert len(records) == 3200

    first = tmp_path / "a.bench.jsonl"
    second = tmp_path / "b.bench.jsonl"
    write_bench(first, records, lay.fingerprint)
    loaded, _ = read_bench(first)
    write_bench(second, loaded, lay.fingerprint)
    assert first.read_bytes() == second.read_bytes()
    assert loaded == records

    cells = {}
    for rec in loaded:
        cells[(rec.method, rec.dataset)] = cells.get((rec.method, rec.dataset), 0) + 1
    assert all(count == 400 for count in cells.values())
    assert sorted(k[1] for k in cells if k[0] == "ours") == \
           ["abank", "age", "amex", "rbchurn", "taobao", "vbank"]
    assert sorted(k[1] for k in cells if k[0] == "random") == ["abank", "rbchurn"]
