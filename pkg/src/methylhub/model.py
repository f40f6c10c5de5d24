"""Feed-forward case/control classifier, AUROC, and nested cross-validation.

The network is plain numpy: ReLU hidden layers, one logistic output, mean
weighted binary cross-entropy plus an L2 penalty on weight matrices, trained
with Adam on mini-batches. Inputs are standardized with statistics from the
training split only; the centering and scaling travel with the model.

Every random draw comes from ``np.random.SeedSequence(seed, spawn_key=...)``
keyed by (purpose, fold, ...), so results do not depend on how folds are
scheduled across workers.
"""

from __future__ import annotations

import itertools
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata
from threadpoolctl import threadpool_limits

from .dmstats import welch_arrays
from .errors import MethylhubError, config_from_dict

# spawn-key namespaces
_K_OUTER, _K_INNER_SPLIT, _K_INNER_FIT, _K_FINAL_FIT = 0, 1, 2, 3


@dataclass
class TrainConfig:
    seed: int = 0
    hidden_sizes: list = field(default_factory=lambda: [[32], [64, 16]])
    learning_rate: list = field(default_factory=lambda: [1e-3, 1e-4])
    epochs: int = 200
    batch_size: int = 32
    l2_penalty: float = 1e-4
    feature_prefilter_k: int = 5000
    outer_folds: int = 5
    inner_folds: int = 3

    def __post_init__(self):
        if not self.hidden_sizes or not self.learning_rate:
            raise MethylhubError("CONFIG_INVALID", "hyperparameter grids must be non-empty")
        if self.outer_folds < 2 or self.inner_folds < 2:
            raise MethylhubError("CONFIG_INVALID", "folds must be >= 2")
        if self.epochs < 1 or self.batch_size < 1 or self.feature_prefilter_k < 1:
            raise MethylhubError("CONFIG_INVALID", "epochs, batch_size, prefilter_k must be >= 1")
        self.hidden_sizes = [list(h) for h in self.hidden_sizes]
        self.learning_rate = [float(lr) for lr in self.learning_rate]

    @classmethod
    def from_dict(cls, d: dict | None) -> "TrainConfig":
        return config_from_dict(cls, d)

    def to_dict(self) -> dict:
        return asdict(self)

    def grid(self) -> list[dict]:
        return [
            {"hidden_sizes": list(h), "learning_rate": lr}
            for h, lr in itertools.product(self.hidden_sizes, self.learning_rate)
        ]


@dataclass
class MlpModel:
    layer_sizes: list
    weights: list
    biases: list
    feature_subset: np.ndarray
    center: np.ndarray = None
    scale: np.ndarray = None
    loss_history: list = field(default_factory=list)

    def __post_init__(self):
        self.feature_subset = np.asarray(self.feature_subset, dtype=int)
        d = self.layer_sizes[0]
        if len(np.unique(self.feature_subset)) != self.feature_subset.size:
            raise MethylhubError("CONFIG_INVALID", "duplicate feature indices")
        if self.feature_subset.size != d:
            raise MethylhubError("DIMENSION_MISMATCH", "feature_subset vs input width")
        for (a, b), W, bias in zip(zip(self.layer_sizes, self.layer_sizes[1:]),
                                   self.weights, self.biases):
            if W.shape != (a, b) or bias.shape != (b,):
                raise MethylhubError("DIMENSION_MISMATCH", "weight shapes vs layer_sizes")
        if self.center is None:
            self.center = np.zeros(d)
        if self.scale is None:
            self.scale = np.ones(d)

    @property
    def d_in(self) -> int:
        return self.layer_sizes[0]

    def standardize(self, X) -> np.ndarray:
        return (X - self.center) / self.scale

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(map(int, self.layer_sizes)),
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "feature_subset": self.feature_subset.tolist(),
            "center": self.center.tolist(),
            "scale": self.scale.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpModel":
        return cls(
            d["layer_sizes"],
            [np.asarray(W, float) for W in d["weights"]],
            [np.asarray(b, float) for b in d["biases"]],
            d["feature_subset"],
            np.asarray(d["center"], float),
            np.asarray(d["scale"], float),
        )


def sigmoid(z):
    z = np.asarray(z)
    if z.dtype != np.float32:
        z = z.astype(float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward(weights, biases, Z):
    """Return output logits (n,) and the per-layer (pre, post) activations."""
    acts = [Z]
    pres = []
    a = Z
    last = len(weights) - 1
    for i, (W, b) in enumerate(zip(weights, biases)):
        z = a @ W + b
        pres.append(z)
        a = z if i == last else np.maximum(z, 0.0)
        acts.append(a)
    return acts[-1][:, 0], pres, acts


def logits(model: MlpModel, X) -> np.ndarray:
    """Pre-logistic outputs for raw inputs restricted to ``feature_subset``."""
    X = np.atleast_2d(np.asarray(X, float))
    if X.shape[1] != model.d_in:
        raise MethylhubError("DIMENSION_MISMATCH", f"got {X.shape[1]} features, model wants {model.d_in}")
    return _forward(model.weights, model.biases, model.standardize(X))[0]


def forward(model: MlpModel, x) -> np.ndarray | float:
    """Case probability for one vector (returns float) or a batch of rows."""
    x = np.asarray(x, float)
    s = sigmoid(logits(model, x))
    return float(s[0]) if x.ndim == 1 else s


def _backward(weights, pres, acts, dout, need_input=True):
    """Backpropagate d(loss)/d(logit) = ``dout`` (n,). Returns dW, db, dInput."""
    g = dout[:, None]
    gW, gb = [None] * len(weights), [None] * len(weights)
    for i in range(len(weights) - 1, -1, -1):
        if i != len(weights) - 1:
            g = g * (pres[i] > 0)
        gW[i] = acts[i].T @ g
        gb[i] = g.sum(axis=0)
        if i or need_input:
            g = g @ weights[i].T
    return gW, gb, g


def loss_and_grads(weights, biases, Z, y, sample_weight=None, l2=0.0):
    """Mean weighted BCE (from logits) + l2 * sum ||W||^2, with analytic gradients."""
    y = np.asarray(y, float)
    n = y.size
    sw = np.ones(n) if sample_weight is None else np.asarray(sample_weight, float)
    out, pres, acts = _forward(weights, biases, Z)
    # softplus(z) - y z, written to avoid overflow
    bce = np.maximum(out, 0) + np.log1p(np.exp(-np.abs(out))) - y * out
    loss = float(np.mean(sw * bce)) + l2 * sum(float(np.sum(W * W)) for W in weights)
    dout = sw * (sigmoid(out) - y) / n
    gW, gb, _ = _backward(weights, pres, acts, dout, need_input=False)
    gW = [g + 2.0 * l2 * W for g, W in zip(gW, weights)]
    return loss, gW, gb


def _train_grads(weights, biases, Z, y, sw, l2):
    # loss_and_grads without the loss value; gradients updated in place
    out, pres, acts = _forward(weights, biases, Z)
    gW, gb, _ = _backward(weights, pres, acts, sw * (sigmoid(out) - y) / y.size,
                          need_input=False)
    for g, W in zip(gW, weights):
        g += (2.0 * l2) * W
    return gW + gb


class _Adam:
    """Adam with bias correction; state buffers reused across steps."""

    def __init__(self, params, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.params, self.lr, self.b1, self.b2, self.eps = params, lr, b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.tmp = [np.empty_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1, b2 = self.b1, self.b2
        step = self.lr / (1.0 - b1 ** self.t)
        inv_c2 = 1.0 / np.sqrt(1.0 - b2 ** self.t)
        for p, g, m, v, tmp in zip(self.params, grads, self.m, self.v, self.tmp):
            m *= b1
            np.multiply(g, 1.0 - b1, out=tmp)
            m += tmp
            v *= b2
            np.multiply(g, g, out=tmp)
            tmp *= 1.0 - b2
            v += tmp
            np.sqrt(v, out=tmp)
            tmp *= inv_c2
            tmp += self.eps
            np.divide(m, tmp, out=tmp)
            tmp *= step
            p -= tmp


def input_gradients(model: MlpModel, Zs) -> np.ndarray:
    """d(logit)/d(standardized input) for each row of ``Zs``."""
    out, pres, acts = _forward(model.weights, model.biases, Zs)
    _, _, g = _backward(model.weights, pres, acts, np.ones(out.size))
    return g


def init_params(layer_sizes, rng):
    """He-normal weights for ReLU layers, Glorot for the output; zero biases."""
    weights, biases = [], []
    last = len(layer_sizes) - 2
    for i, (a, b) in enumerate(zip(layer_sizes, layer_sizes[1:])):
        sd = np.sqrt(2.0 / (a + b)) if i == last else np.sqrt(2.0 / a)
        weights.append(rng.normal(0.0, sd, size=(a, b)))
        biases.append(np.zeros(b))
    return weights, biases


def class_weights(y) -> np.ndarray:
    """Inverse-frequency weights n / (2 n_class), mean 1 over the sample."""
    y = np.asarray(y, bool)
    n, n_pos = y.size, int(y.sum())
    return np.where(y, n / (2.0 * n_pos), n / (2.0 * (n - n_pos)))


def _check_labels(y):
    y = np.asarray(y).astype(bool)
    if y.all() or not y.any():
        raise MethylhubError("SINGLE_CLASS", "both classes are required")
    return y


def train(X, labels, hidden_sizes=(32,), learning_rate=1e-3, seed=0, *, epochs=200,
          batch_size=32, l2_penalty=1e-4, feature_subset=None, rng=None) -> MlpModel:
    """Fit an MLP on rows of ``X`` (already restricted to ``feature_subset``).

    ``rng`` overrides ``seed`` when given; the same generator state always
    yields bit-identical weights.
    """
    X = np.asarray(X, float)
    y = _check_labels(labels)
    if np.bincount(y.astype(int), minlength=2).min() < 2:
        raise MethylhubError("TOO_FEW_SAMPLES", "need >= 2 samples per class")
    if not np.all(np.isfinite(X)):
        raise MethylhubError("NONFINITE_INPUT", "X contains NaN or inf")
    n, d = X.shape
    if feature_subset is None:
        feature_subset = np.arange(d)
    rng = rng if rng is not None else np.random.default_rng(seed)

    center = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    # float32 storage during fitting; the returned model is float64
    Z = ((X - center) / scale).astype(np.float32)
    yf = y.astype(np.float32)
    sw = class_weights(y).astype(np.float32)

    sizes = [d, *map(int, hidden_sizes), 1]
    weights, biases = init_params(sizes, rng)
    weights = [W.astype(np.float32) for W in weights]
    biases = [b.astype(np.float32) for b in biases]
    opt = _Adam(weights + biases, learning_rate)
    history = []
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            opt.step(_train_grads(weights, biases, Z[idx], yf[idx], sw[idx], l2_penalty))
        history.append(loss_and_grads(weights, biases, Z, yf, sw, l2_penalty)[0])
    weights = [W.astype(float) for W in weights]
    biases = [b.astype(float) for b in biases]
    return MlpModel(sizes, weights, biases, feature_subset, center, scale, history)


def auroc(scores, labels) -> float:
    """Mann-Whitney U / (n_pos n_neg), ties counted one half."""
    s = np.asarray(scores, float)
    y = _check_labels(labels)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    ranks = rankdata(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_points(scores, labels) -> list[tuple[float, float, float]]:
    """(threshold, fpr, tpr) at each distinct score, from strictest to loosest."""
    s = np.asarray(scores, float)
    y = _check_labels(labels)
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    n_pos, n_neg = y.sum(), (~y).sum()
    pts = [(float("inf"), 0.0, 0.0)]
    tp = fp = 0
    for i in range(s.size):
        tp += y[i]
        fp += not y[i]
        if i == s.size - 1 or s[i + 1] != s[i]:
            pts.append((float(s[i]), fp / n_neg, tp / n_pos))
    return pts


def stratified_kfold(labels, k: int, rng) -> list[np.ndarray]:
    """Split indices into ``k`` test folds, dealing each class round-robin after a shuffle."""
    y = np.asarray(labels, bool)
    if min(int(y.sum()), int((~y).sum())) < k:
        raise MethylhubError("TOO_FEW_SAMPLES", f"fewer than {k} samples in a class")
    folds = [[] for _ in range(k)]
    offset = 0
    for cls in (True, False):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(idx.size)]
        for j, i in enumerate(idx):
            folds[(j + offset) % k].append(i)
        offset += idx.size
    return [np.sort(np.array(f, dtype=int)) for f in folds]


def prefilter(X, y, k: int) -> np.ndarray:
    """Indices (ascending) of the ``k`` columns with the largest Welch |t|."""
    d = X.shape[1]
    if k >= d:
        return np.arange(d)
    _, t, _, _ = welch_arrays(X[y].T, X[~y].T)
    top = np.argsort(-np.abs(t), kind="stable")[:k]
    return np.sort(top)


def _rng(seed, *key):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def _fit(X, y, hp, cfg: TrainConfig, rng) -> MlpModel:
    subset = prefilter(X, y, cfg.feature_prefilter_k)
    return train(
        X[:, subset], y, hp["hidden_sizes"], hp["learning_rate"], rng=rng,
        epochs=cfg.epochs, batch_size=cfg.batch_size, l2_penalty=cfg.l2_penalty,
        feature_subset=subset,
    )


def _score(model: MlpModel, X) -> np.ndarray:
    return sigmoid(logits(model, X[:, model.feature_subset]))


@dataclass
class FoldResult:
    fold: int
    auroc: float
    hyperparams: dict
    model: MlpModel
    test_idx: np.ndarray
    test_ids: list
    test_scores: np.ndarray
    inner_table: list

    def to_dict(self) -> dict:
        return {
            "fold": self.fold,
            "auroc": self.auroc,
            "hyperparams": self.hyperparams,
            "test_ids": list(self.test_ids),
            "test_scores": self.test_scores.tolist(),
            "feature_subset": self.model.feature_subset.tolist(),
            "inner_cv": self.inner_table,
            "final_train_loss": [self.model.loss_history[0], self.model.loss_history[-1]],
        }


@dataclass
class CvResult:
    folds: list
    pooled_auroc: float
    config: dict

    @property
    def fold_aurocs(self) -> list[float]:
        return [f.auroc for f in self.folds]

    @property
    def mean_auroc(self) -> float:
        return float(np.mean(self.fold_aurocs))

    @property
    def sd_auroc(self) -> float:
        return float(np.std(self.fold_aurocs, ddof=1)) if len(self.folds) > 1 else 0.0

    def to_dict(self) -> dict:
        return {
            "mean_auroc": self.mean_auroc,
            "sd_auroc": self.sd_auroc,
            "pooled_auroc": self.pooled_auroc,
            "auroc_note": "mean_auroc averages outer folds; pooled_auroc ranks all outer-test scores together",
            "config": self.config,
            "folds": [f.to_dict() for f in self.folds],
        }

    def write(self, out_dir, feature_ids=None):
        """Write ``cv_result.json`` and one ``weights_fold{k}.json`` per fold."""
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "cv_result.json"), "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")
        for f in self.folds:
            d = f.model.to_dict()
            if feature_ids is not None:
                d["feature_ids"] = [feature_ids[i] for i in f.model.feature_subset]
            with open(os.path.join(out_dir, f"weights_fold{f.fold}.json"), "w") as fh:
                json.dump(d, fh)
                fh.write("\n")


def _run_outer_fold(args) -> FoldResult:
    X, y, fold, train_idx, test_idx, cfg, sample_ids = args
    with threadpool_limits(limits=1):
        Xtr, ytr = X[train_idx], y[train_idx]
        inner = stratified_kfold(ytr, cfg.inner_folds, _rng(cfg.seed, _K_INNER_SPLIT, fold))
        table = []
        for g, hp in enumerate(cfg.grid()):
            scores = []
            for i, val in enumerate(inner):
                fit = np.setdiff1d(np.arange(ytr.size), val)
                model = _fit(Xtr[fit], ytr[fit], hp, cfg, _rng(cfg.seed, _K_INNER_FIT, fold, g, i))
                scores.append(auroc(_score(model, Xtr[val]), ytr[val]))
            table.append({**hp, "inner_aurocs": scores, "mean": float(np.mean(scores))})
        best = max(range(len(table)), key=lambda g: (table[g]["mean"], -g))
        hp = cfg.grid()[best]
        model = _fit(Xtr, ytr, hp, cfg, _rng(cfg.seed, _K_FINAL_FIT, fold))
        s = _score(model, X[test_idx])
    return FoldResult(fold, auroc(s, y[test_idx]), hp, model, test_idx,
                      [sample_ids[i] for i in test_idx], s, table)


def worker_count() -> int:
    env = os.environ.get("METHYLHUB_THREADS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise MethylhubError("CONFIG_INVALID", f"METHYLHUB_THREADS={env!r}") from None
    return os.cpu_count() or 1


def nested_cv(X, labels, cfg: TrainConfig | None = None, sample_ids=None,
              workers: int | None = None) -> CvResult:
    """Stratified outer K-fold; prefilter + grid search by inner CV on outer-train only."""
    cfg = cfg or TrainConfig()
    X = np.asarray(X, float)
    y = _check_labels(labels)
    n = y.size
    if n < 2 * cfg.outer_folds:
        raise MethylhubError("TOO_FEW_SAMPLES", f"n={n} for {cfg.outer_folds} outer folds")
    if not np.all(np.isfinite(X)):
        raise MethylhubError("NONFINITE_INPUT", "X contains NaN or inf")
    sample_ids = list(sample_ids) if sample_ids is not None else [str(i) for i in range(n)]
    outer = stratified_kfold(y, cfg.outer_folds, _rng(cfg.seed, _K_OUTER))
    jobs = [
        (X, y, f, np.setdiff1d(np.arange(n), test), test, cfg, sample_ids)
        for f, test in enumerate(outer)
    ]
    workers = min(workers or worker_count(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            folds = list(pool.map(_run_outer_fold, jobs))
    else:
        folds = [_run_outer_fold(j) for j in jobs]
    folds.sort(key=lambda f: f.fold)
    idx = np.concatenate([f.test_idx for f in folds])
    pooled = auroc(np.concatenate([f.test_scores for f in folds]), y[idx])
    return CvResult(folds, pooled, cfg.to_dict())


def pooled_roc(cv: CvResult, labels) -> list[tuple[float, float, float]]:
    y = np.asarray(labels, bool)
    idx = np.concatenate([f.test_idx for f in cv.folds])
    return roc_points(np.concatenate([f.test_scores for f in cv.folds]), y[idx])
