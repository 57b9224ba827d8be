"""Score predictor with uncertainty: bagged LAD-boosted trees or an MLP ensemble.

Both kinds expose the same contract: fit on (binary feature matrix, score
vector), predict per-row mean and across-member standard deviation. The
tree route trains every member on a bootstrap resample with gradient
boosting that minimizes absolute error directly (sign pseudo-residuals,
median leaf values), so the fitting objective coincides with the MAE the
search loop tracks. The MLP route trains independently initialized
feed-forward regressors on the same absolute-error loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np


class SurrogateError(ValueError):
    pass


@dataclass(frozen=True)
class GbdtParams:
    trees: int = 200
    max_depth: int = 4
    learning_rate: float = 0.1
    min_samples_leaf: int = 3


@dataclass(frozen=True)
class MlpParams:
    hidden: tuple[int, ...] = (64, 64)
    epochs: int = 200
    learning_rate: float = 0.01
    members: int = 8
    batch_size: int = 32


@dataclass(frozen=True)
class PredictorConfig:
    kind: str = "gbdt-bag"  # gbdt-bag | mlp-ensemble
    bag_count: int = 8
    gbdt: GbdtParams = field(default_factory=GbdtParams)
    mlp: MlpParams = field(default_factory=MlpParams)

    def validate(self) -> None:
        if self.kind not in ("gbdt-bag", "mlp-ensemble"):
            raise SurrogateError(f"unknown predictor kind {self.kind!r}")
        if self.members_count < 2:
            raise SurrogateError("uncertainty needs at least 2 ensemble members")
        g, m = self.gbdt, self.mlp
        positives = {
            "gbdt.trees": g.trees, "gbdt.max_depth": g.max_depth,
            "gbdt.learning_rate": g.learning_rate, "gbdt.min_samples_leaf": g.min_samples_leaf,
            "mlp.epochs": m.epochs, "mlp.learning_rate": m.learning_rate,
            "mlp.members": m.members, "mlp.batch_size": m.batch_size,
        }
        bad = [k for k, v in positives.items() if not v > 0]
        if bad:
            raise SurrogateError(f"non-positive hyperparameters: {bad}")
        if any(h <= 0 for h in m.hidden):
            raise SurrogateError("mlp hidden widths must be positive")

    @property
    def members_count(self) -> int:
        return self.bag_count if self.kind == "gbdt-bag" else self.mlp.members

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "bag_count": self.bag_count,
            "gbdt": {f.name: getattr(self.gbdt, f.name) for f in fields(GbdtParams)},
            "mlp": {**{f.name: getattr(self.mlp, f.name) for f in fields(MlpParams)},
                    "hidden": list(self.mlp.hidden)},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PredictorConfig":
        g = d.get("gbdt", {})
        m = dict(d.get("mlp", {}))
        if "hidden" in m:
            m["hidden"] = tuple(m["hidden"])
        return cls(
            kind=d.get("kind", "gbdt-bag"),
            bag_count=d.get("bag_count", 8),
            gbdt=GbdtParams(**g),
            mlp=MlpParams(**m),
        )


@dataclass(frozen=True)
class ScorePrediction:
    mean: float
    std: float


# ---------------------------------------------------------------- LAD trees


@dataclass
class Tree:
    """Flat binary tree splitting on single bits; feature < 0 marks a leaf."""

    feature: np.ndarray  # int32
    left: np.ndarray     # int32, child node index
    right: np.ndarray    # int32
    value: np.ndarray    # float64, leaf value (unused on internal nodes)

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(len(X), dtype=np.float64)
        stack = [(0, np.arange(len(X)))]
        while stack:
            node, rows = stack.pop()
            if rows.size == 0:
                continue
            f = self.feature[node]
            if f < 0:
                out[rows] = self.value[node]
                continue
            hot = X[rows, f] != 0
            stack.append((self.right[node], rows[hot]))
            stack.append((self.left[node], rows[~hot]))
        return out


def _sorted_subset_sad(count: int, cum_count: np.ndarray, cum_sum: np.ndarray) -> float:
    """Sum of absolute deviations from the median for the subset of an
    ascending-sorted array selected by an indicator, given cumulative counts
    and cumulative sums of the selected elements."""
    if count == 0:
        return 0.0
    total = cum_sum[-1]
    t = count // 2

    def prefix(k: int) -> float:
        if k == 0:
            return 0.0
        pos = int(np.searchsorted(cum_count, k, side="left"))
        return float(cum_sum[pos])

    if count % 2 == 1:
        return float(total - prefix(t + 1) - prefix(t))
    return float(total - 2.0 * prefix(t))


def _fit_lad_tree(X: np.ndarray, residuals: np.ndarray, max_depth: int,
                  min_leaf: int) -> Tree:
    feature, left, right, value = [], [], [], []

    def new_node() -> int:
        feature.append(-1)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    def build(rows: np.ndarray, depth: int) -> int:
        node = new_node()
        r = residuals[rows]
        value[node] = float(np.median(r))
        n = rows.size
        if depth >= max_depth or n < 2 * min_leaf:
            return node

        order = np.argsort(r, kind="stable")
        rs = r[order]
        Xs = X[rows[order]]
        prefix_all = np.concatenate(([0.0], np.cumsum(rs)))
        t = n // 2
        if n % 2 == 1:
            parent_sad = prefix_all[-1] - prefix_all[t + 1] - prefix_all[t]
        else:
            parent_sad = prefix_all[-1] - 2.0 * prefix_all[t]

        cnt1 = np.cumsum(Xs, axis=0)
        sum1 = np.cumsum(np.where(Xs != 0, rs[:, None], 0.0), axis=0)
        pos_count = np.arange(1, n + 1)

        best_gain, best_feat = 0.0, -1
        for j in range(X.shape[1]):
            c1 = int(cnt1[-1, j])
            c0 = n - c1
            if c1 < min_leaf or c0 < min_leaf:
                continue
            sad1 = _sorted_subset_sad(c1, cnt1[:, j], sum1[:, j])
            sad0 = _sorted_subset_sad(c0, pos_count - cnt1[:, j], prefix_all[1:] - sum1[:, j])
            gain = parent_sad - sad1 - sad0
            if gain > best_gain + 1e-12:  # ties keep the lowest feature index
                best_gain, best_feat = gain, j

        if best_feat < 0:
            return node

        hot = X[rows, best_feat] != 0
        feature[node] = best_feat
        left[node] = build(rows[~hot], depth + 1)
        right[node] = build(rows[hot], depth + 1)
        return node

    build(np.arange(len(X)), 0)
    return Tree(
        feature=np.asarray(feature, dtype=np.int32),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        value=np.asarray(value, dtype=np.float64),
    )


@dataclass
class GbdtMember:
    base: float
    learning_rate: float
    trees: list[Tree]

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.full(len(X), self.base, dtype=np.float64)
        for tree in self.trees:
            out += self.learning_rate * tree.predict(X)
        return out

    def staged_predict(self, X: np.ndarray):
        """Predictions after each boosting round (for monotonicity checks)."""
        out = np.full(len(X), self.base, dtype=np.float64)
        for tree in self.trees:
            out += self.learning_rate * tree.predict(X)
            yield out.copy()


def _fit_gbdt_member(X: np.ndarray, y: np.ndarray, params: GbdtParams,
                     rng: np.random.Generator) -> GbdtMember:
    boot = rng.integers(0, len(X), size=len(X))
    Xb, yb = X[boot], y[boot]
    base = float(np.median(yb))
    pred = np.full(len(Xb), base, dtype=np.float64)
    trees = []
    for _ in range(params.trees):
        tree = _fit_lad_tree(Xb, yb - pred, params.max_depth, params.min_samples_leaf)
        pred += params.learning_rate * tree.predict(Xb)
        trees.append(tree)
    return GbdtMember(base=base, learning_rate=params.learning_rate, trees=trees)


# ---------------------------------------------------------------- MLP members


@dataclass
class MlpMember:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def predict(self, X: np.ndarray) -> np.ndarray:
        h = X
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ W + b)
        return (h @ self.weights[-1] + self.biases[-1]).ravel()


def mlp_loss_and_grad(member: MlpMember, X: np.ndarray, y: np.ndarray):
    """Mean absolute error and its analytic gradient w.r.t. all parameters."""
    acts = [X]
    h = X
    for W, b in zip(member.weights[:-1], member.biases[:-1]):
        h = np.tanh(h @ W + b)
        acts.append(h)
    out = (h @ member.weights[-1] + member.biases[-1]).ravel()
    err = out - y
    loss = float(np.mean(np.abs(err)))

    delta = (np.sign(err) / len(y))[:, None]
    grads_w, grads_b = [], []
    for layer in range(len(member.weights) - 1, -1, -1):
        a = acts[layer]
        grads_w.append(a.T @ delta)
        grads_b.append(delta.sum(axis=0))
        if layer > 0:
            delta = (delta @ member.weights[layer].T) * (1.0 - acts[layer] ** 2)
    grads_w.reverse()
    grads_b.reverse()
    return loss, grads_w, grads_b


def init_mlp_member(n_features: int, hidden: tuple[int, ...],
                    rng: np.random.Generator) -> MlpMember:
    sizes = [n_features, *hidden, 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpMember(weights=weights, biases=biases)


def _fit_mlp_member(X: np.ndarray, y: np.ndarray, params: MlpParams,
                    rng: np.random.Generator) -> MlpMember:
    member = init_mlp_member(X.shape[1], params.hidden, rng)
    n = len(X)
    for _ in range(params.epochs):
        order = rng.permutation(n)
        for start in range(0, n, params.batch_size):
            idx = order[start:start + params.batch_size]
            _, gw, gb = mlp_loss_and_grad(member, X[idx], y[idx])
            for W, g in zip(member.weights, gw):
                W -= params.learning_rate * g
            for b, g in zip(member.biases, gb):
                b -= params.learning_rate * g
    return member


# ---------------------------------------------------------------- public API


@dataclass
class PredictorModel:
    kind: str
    members: list
    n_features: int
    layout_fp: str = ""


def _as_matrix(features) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise SurrogateError(f"feature matrix must be 2-D, got shape {X.shape}")
    return X


def fit(features, scores, cfg: PredictorConfig, rng: np.random.Generator,
        layout_fp: str = "") -> PredictorModel:
    """Train all ensemble members. Deterministic for a given rng state."""
    cfg.validate()
    X = _as_matrix(features)
    y = np.asarray(scores, dtype=np.float64)
    if len(X) != len(y):
        raise SurrogateError(f"feature rows {len(X)} != score count {len(y)}")
    if len(X) < 5:
        raise SurrogateError(f"need at least 5 training rows, got {len(X)}")
    if not np.all(np.isfinite(y)):
        raise SurrogateError("scores contain non-finite values")

    member_seeds = rng.integers(0, 2**63 - 1, size=cfg.members_count)
    members = []
    for seed in member_seeds:
        member_rng = np.random.default_rng(int(seed))
        if cfg.kind == "gbdt-bag":
            members.append(_fit_gbdt_member(X, y, cfg.gbdt, member_rng))
        else:
            members.append(_fit_mlp_member(X, y, cfg.mlp, member_rng))
    return PredictorModel(kind=cfg.kind, members=members, n_features=X.shape[1],
                          layout_fp=layout_fp)


def member_predictions(model: PredictorModel, features) -> np.ndarray:
    """(members, rows) matrix of raw member outputs."""
    X = _as_matrix(features)
    if X.shape[1] != model.n_features:
        raise SurrogateError(
            f"feature width {X.shape[1]} does not match training width {model.n_features}"
        )
    return np.stack([m.predict(X) for m in model.members])


def predict(model: PredictorModel, features) -> list[ScorePrediction]:
    """Per-row mean and sample standard deviation across ensemble members."""
    preds = member_predictions(model, features)
    means = preds.mean(axis=0)
    stds = preds.std(axis=0, ddof=1)
    return [ScorePrediction(mean=float(m), std=float(s)) for m, s in zip(means, stds)]


def eval_mae(model: PredictorModel, features, scores) -> float:
    y = np.asarray(scores, dtype=np.float64)
    preds = predict(model, features)
    if len(preds) != len(y):
        raise SurrogateError(f"prediction count {len(preds)} != score count {len(y)}")
    return float(np.mean([abs(p.mean - t) for p, t in zip(preds, y)]))


# ---------------------------------------------------------------- checkpoints

_CHECKPOINT_VERSION = 1


def save_model(model: PredictorModel, path: str | Path) -> None:
    """Versioned binary dump; float64 arrays round-trip bit-exactly."""
    arrays: dict[str, np.ndarray] = {
        "version": np.asarray(_CHECKPOINT_VERSION, dtype=np.int64),
        "kind": np.asarray(model.kind),
        "layout_fp": np.asarray(model.layout_fp),
        "n_features": np.asarray(model.n_features, dtype=np.int64),
        "n_members": np.asarray(len(model.members), dtype=np.int64),
    }
    for i, member in enumerate(model.members):
        if model.kind == "gbdt-bag":
            arrays[f"m{i}_base"] = np.asarray(member.base, dtype=np.float64)
            arrays[f"m{i}_lr"] = np.asarray(member.learning_rate, dtype=np.float64)
            arrays[f"m{i}_sizes"] = np.asarray([len(t.feature) for t in member.trees], dtype=np.int64)
            arrays[f"m{i}_feature"] = np.concatenate([t.feature for t in member.trees])
            arrays[f"m{i}_left"] = np.concatenate([t.left for t in member.trees])
            arrays[f"m{i}_right"] = np.concatenate([t.right for t in member.trees])
            arrays[f"m{i}_value"] = np.concatenate([t.value for t in member.trees])
        else:
            arrays[f"m{i}_layers"] = np.asarray(len(member.weights), dtype=np.int64)
            for l, (W, b) in enumerate(zip(member.weights, member.biases)):
                arrays[f"m{i}_W{l}"] = W
                arrays[f"m{i}_b{l}"] = b
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path: str | Path) -> PredictorModel:
    with np.load(path, allow_pickle=False) as data:
        version = int(data["version"])
        if version != _CHECKPOINT_VERSION:
            raise SurrogateError(f"unsupported checkpoint version {version}")
        kind = str(data["kind"])
        members = []
        for i in range(int(data["n_members"])):
            if kind == "gbdt-bag":
                sizes = data[f"m{i}_sizes"]
                bounds = np.concatenate(([0], np.cumsum(sizes)))
                trees = [
                    Tree(
                        feature=data[f"m{i}_feature"][a:b],
                        left=data[f"m{i}_left"][a:b],
                        right=data[f"m{i}_right"][a:b],
                        value=data[f"m{i}_value"][a:b],
                    )
                    for a, b in zip(bounds[:-1], bounds[1:])
                ]
                members.append(GbdtMember(base=float(data[f"m{i}_base"]),
                                          learning_rate=float(data[f"m{i}_lr"]),
                                          trees=trees))
            else:
                n_layers = int(data[f"m{i}_layers"])
                members.append(MlpMember(
                    weights=[data[f"m{i}_W{l}"] for l in range(n_layers)],
                    biases=[data[f"m{i}_b{l}"] for l in range(n_layers)],
                ))
        return PredictorModel(kind=kind, members=members,
                              n_features=int(data["n_features"]),
                              layout_fp=str(data["layout_fp"]))
