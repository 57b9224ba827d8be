import numpy as np
import pytest

from seqnas.avec import encode, feature_layout
from seqnas.space import SearchSpaceConfig, sample_architecture
from seqnas.surrogate import (
    GbdtParams,
    MlpParams,
    PredictorConfig,
    SurrogateError,
    _fit_lad_tree,
    eval_mae,
    fit,
    init_mlp_member,
    load_model,
    member_predictions,
    mlp_loss_and_grad,
    predict,
    save_model,
)


def hidden_function_data(n, seed, noise=0.02, interactions=False):
    """Rows are AVec encodings of sampled architectures; targets follow a
    hidden linear (optionally pairwise) function of the bits plus noise."""
    cfg = SearchSpaceConfig()
    lay = feature_layout(cfg)
    rng = np.random.default_rng(seed)
    w = rng.normal(0, 0.5, len(lay))
    pairs = []
    if interactions:
        pairs = [(i, j, rng.normal(0, 0.3)) for i in range(0, len(lay), 7)
                 for j in range(i + 3, len(lay), 11)]
    X, y = [], []
    seen = set()
    while len(X) < n:
        spec = sample_architecture(cfg, rng)
        vec = encode(spec, cfg, lay)
        if vec.to01() in seen:
            continue
        seen.add(vec.to01())
        phi = vec.as_array()
        target = float(phi @ w)
        for i, j, c in pairs:
            target += c * phi[i] * phi[j]
        y.append(target + rng.normal(0, noise))
        X.append(phi)
    return np.asarray(X), np.asarray(y)


def small_cfg(kind="gbdt-bag"):
    return PredictorConfig(kind=kind, bag_count=4,
                           gbdt=GbdtParams(trees=60, max_depth=4),
                           mlp=MlpParams(hidden=(32,), epochs=80, members=4))


# ---------------------------------------------------------------- tree oracle


def brute_force_sad(values):
    m = np.median(values)
    return float(np.sum(np.abs(values - m)))


def test_split_gain_matches_brute_force_oracle():
    rng = np.random.default_rng(5)
    for _ in range(20):
        n, d = int(rng.integers(6, 60)), int(rng.integers(2, 10))
        X = rng.integers(0, 2, size=(n, d)).astype(np.float64)
        r = rng.normal(0, 1, n)
        tree = _fit_lad_tree(X, r, max_depth=1, min_leaf=1)
        # oracle: best single split by exhaustive SAD reduction, lowest index wins
        parent = brute_force_sad(r)
        best_gain, best_feat = 0.0, -1
        for j in range(d):
            hot = X[:, j] != 0
            if hot.sum() < 1 or (~hot).sum() < 1:
                continue
            gain = parent - brute_force_sad(r[hot]) - brute_force_sad(r[~hot])
            if gain > best_gain + 1e-12:
                best_gain, best_feat = gain, j
        assert tree.feature[0] == best_feat
        if best_feat >= 0:
            hot = X[:, best_feat] != 0
            assert tree.value[tree.right[0]] == pytest.approx(np.median(r[hot]))
            assert tree.value[tree.left[0]] == pytest.approx(np.median(r[~hot]))


# ---------------------------------------------------------------- fit/predict


def test_constant_targets_predict_exactly(rng):
    X = np.random.default_rng(0).integers(0, 2, size=(30, 10)).astype(float)
    y = np.full(30, 0.37)
    for kind in ("gbdt-bag",):
        model = fit(X, y, small_cfg(kind), np.random.default_rng(1))
        for p in predict(model, X):
            assert p.mean == pytest.approx(0.37, abs=1e-12)
            assert p.std == pytest.approx(0.0, abs=1e-12)


def test_fit_beats_constant_baseline_on_hidden_function():
    X, y = hidden_function_data(400, seed=11)
    Xtr, ytr, Xte, yte = X[:300], y[:300], X[300:], y[300:]
    baseline = np.mean(np.abs(yte - np.median(ytr)))
    model = fit(Xtr, ytr, PredictorConfig(), np.random.default_rng(2))
    assert eval_mae(model, Xte, yte) <= 0.5 * baseline


def test_fit_is_deterministic():
    X, y = hidden_function_data(80, seed=3)
    probe = X[:10]
    a = fit(X, y, small_cfg(), np.random.default_rng(42))
    b = fit(X, y, small_cfg(), np.random.default_rng(42))
    assert np.array_equal(member_predictions(a, probe), member_predictions(b, probe))


def test_predict_hand_computed_std():
    # two members predicting 0.4 and 0.6: mean 0.5, sample std 0.1414
    from seqnas.surrogate import GbdtMember, PredictorModel

    members = [GbdtMember(base=0.4, learning_rate=1.0, trees=[]),
               GbdtMember(base=0.6, learning_rate=1.0, trees=[])]
    model = PredictorModel(kind="gbdt-bag", members=members, n_features=3)
    [p] = predict(model, np.zeros((1, 3)))
    assert p.mean == pytest.approx(0.5)
    assert p.std == pytest.approx(0.14142135623730948, abs=1e-9)


def test_eval_mae_examples():
    from seqnas.surrogate import GbdtMember, PredictorModel

    model = PredictorModel(kind="gbdt-bag", n_features=2,
                           members=[GbdtMember(base=0.7, learning_rate=1.0, trees=[])] * 2)
    X = np.zeros((1, 2))
    assert eval_mae(model, X, [0.7]) == 0.0
    assert eval_mae(model, X, [0.5]) == pytest.approx(0.2)


def test_eval_mae_matches_row_oracle():
    X, y = hidden_function_data(60, seed=9)
    model = fit(X[:40], y[:40], small_cfg(), np.random.default_rng(0))
    got = eval_mae(model, X[40:], y[40:])
    preds = member_predictions(model, X[40:]).mean(axis=0)
    oracle = sum(abs(float(p) - float(t)) for p, t in zip(preds, y[40:])) / 20
    assert got == pytest.approx(oracle, rel=1e-12)


def test_member_training_mae_is_monotone():
    X, y = hidden_function_data(120, seed=21)
    member_rng = np.random.default_rng(7)
    from seqnas.surrogate import _fit_gbdt_member

    member = _fit_gbdt_member(X, y, GbdtParams(trees=40), np.random.default_rng(13))
    # evaluate on the member's own bootstrap sample, reproduced from the seed
    boot = np.random.default_rng(13).integers(0, len(X), size=len(X))
    Xb, yb = X[boot], y[boot]
    last = np.mean(np.abs(yb - member.base))
    for staged in member.staged_predict(Xb):
        mae = np.mean(np.abs(yb - staged))
        assert mae <= last + 1e-12
        last = mae


def test_prediction_row_permutation_invariance():
    X, y = hidden_function_data(60, seed=4)
    model = fit(X, y, small_cfg(), np.random.default_rng(3))
    probe = X[:17]
    perm = np.random.default_rng(0).permutation(17)
    direct = member_predictions(model, probe[perm])
    shuffled = member_predictions(model, probe)[:, perm]
    assert np.array_equal(direct, shuffled)


def test_uncertainty_larger_far_from_training_data():
    wins = 0
    for seed in range(5):
        X, y = hidden_function_data(220, seed=100 + seed)
        model = fit(X[:200], y[:200], small_cfg(), np.random.default_rng(seed))
        far = 1.0 - X[:200][:40]  # complement flips every bit: max Hamming distance
        std_far = member_predictions(model, far).std(axis=0, ddof=1).mean()
        std_train = member_predictions(model, X[:200]).std(axis=0, ddof=1).mean()
        wins += std_far >= std_train
    assert wins >= 4  # statistical expectation, not a per-seed guarantee


def test_uncertainty_shrinks_with_more_data():
    Xall, yall = hidden_function_data(600, seed=55)
    probe = Xall[500:550]
    cfg = PredictorConfig()
    small = fit(Xall[:50], yall[:50], cfg, np.random.default_rng(8))
    large = fit(Xall[:500], yall[:500], cfg, np.random.default_rng(8))
    std_small = np.mean([p.std for p in predict(small, probe)])
    std_large = np.mean([p.std for p in predict(large, probe)])
    assert std_large < std_small


# ---------------------------------------------------------------- MLP


def test_mlp_gradient_matches_finite_differences():
    rng = np.random.default_rng(77)
    for widths in [(4,), (8, 5)]:
        n_in = int(rng.integers(3, 20))
        member = init_mlp_member(n_in, widths, rng)
        X = rng.integers(0, 2, size=(12, n_in)).astype(float)
        y = rng.normal(0, 1, 12)
        loss, gw, gb = mlp_loss_and_grad(member, X, y)
        flat_analytic = np.concatenate([g.ravel() for g in gw] + [g.ravel() for g in gb])

        h = 1e-6
        fd = []
        for arr in member.weights + member.biases:
            flat = arr.ravel()
            for k in range(flat.size):
                old = flat[k]
                flat[k] = old + h
                up, _, _ = mlp_loss_and_grad(member, X, y)
                flat[k] = old - h
                dn, _, _ = mlp_loss_and_grad(member, X, y)
                flat[k] = old
                fd.append((up - dn) / (2 * h))
        flat_fd = np.asarray(fd)
        denom = max(np.linalg.norm(flat_analytic), np.linalg.norm(flat_fd), 1e-12)
        assert np.linalg.norm(flat_analytic - flat_fd) / denom < 1e-4


def test_mlp_ensemble_fits_hidden_function():
    X, y = hidden_function_data(260, seed=31)
    Xtr, ytr, Xte, yte = X[:200], y[:200], X[200:], y[200:]
    cfg = PredictorConfig(kind="mlp-ensemble", mlp=MlpParams(hidden=(32,), epochs=120, members=4))
    model = fit(Xtr, ytr, cfg, np.random.default_rng(6))
    baseline = np.mean(np.abs(yte - np.median(ytr)))
    assert eval_mae(model, Xte, yte) < baseline


# ---------------------------------------------------------------- validation


def test_rejects_bad_inputs():
    X = np.zeros((4, 3))
    with pytest.raises(SurrogateError, match="at least 5"):
        fit(X, np.zeros(4), small_cfg(), np.random.default_rng(0))
    X = np.zeros((6, 3))
    with pytest.raises(SurrogateError, match="non-finite"):
        fit(X, [0, 1, np.nan, 0, 1, 0], small_cfg(), np.random.default_rng(0))
    with pytest.raises(SurrogateError, match="2-D"):
        fit(np.zeros(6), np.zeros(6), small_cfg(), np.random.default_rng(0))
    model = fit(np.random.default_rng(0).integers(0, 2, (8, 3)).astype(float),
                np.arange(8.0), small_cfg(), np.random.default_rng(0))
    with pytest.raises(SurrogateError, match="width"):
        predict(model, np.zeros((2, 4)))


def test_config_validation():
    with pytest.raises(SurrogateError):
        PredictorConfig(kind="random-forest").validate()
    with pytest.raises(SurrogateError):
        PredictorConfig(bag_count=1).validate()
    with pytest.raises(SurrogateError):
        PredictorConfig(gbdt=GbdtParams(trees=0)).validate()


def test_config_dict_round_trip():
    cfg = PredictorConfig(kind="mlp-ensemble", bag_count=5,
                          gbdt=GbdtParams(trees=10), mlp=MlpParams(hidden=(3, 4)))
    assert PredictorConfig.from_dict(cfg.to_dict()) == cfg


# ---------------------------------------------------------------- checkpoints


@pytest.mark.parametrize("kind", ["gbdt-bag", "mlp-ensemble"])
def test_checkpoint_round_trip_bit_exact(tmp_path, kind):
    X, y = hidden_function_data(60, seed=13)
    model = fit(X, y, small_cfg(kind), np.random.default_rng(5), layout_fp="fp123")
    path = tmp_path / "model.npz"
    save_model(model, path)
    again = load_model(path)
    assert again.kind == model.kind
    assert again.layout_fp == "fp123"
    assert np.array_equal(member_predictions(again, X), member_predictions(model, X))
    if kind == "gbdt-bag":
        for a, b in zip(model.members, again.members):
            for ta, tb in zip(a.trees, b.trees):
                assert np.array_equal(ta.value, tb.value)  # bit-exact float64
