"""Classifier head on pooled features, trained by explicit backpropagation.

Layout: FC(K, 512) -> BN -> ReLU -> FC(512, 256) -> Dropout(0.4) -> BN ->
ReLU -> FC(256, C). The per-point encoder stays frozen; only the head is
trained (softmax cross-entropy, SGD with momentum, cosine learning rate).
"""

from __future__ import annotations

import dataclasses
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .corruptions import CorruptionSpec, corrupt
from .encoders import Encoder
from .errors import ConfigError, DataError
from .pointcloud import PointCloud, atomic_write_bytes
from .pooling import pool_values
from .rng import child_seed, seeded_rng

HIDDEN = (512, 256)
DROPOUT = 0.4
BN_MOMENTUM = 0.1
BN_EPS = 1e-5
AUG_SCALE = (2.0 / 3.0, 1.5)
AUG_SHIFT = 0.2


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: int = 32
    lr: float = 0.1
    lr_min: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4
    optimizer: str = "sgd"
    schedule: str = "cosine"
    augment_scale: bool = False
    augment_translate: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if not self.lr > 0:
            raise ConfigError("learning rate must be positive")
        if self.optimizer != "sgd":
            raise ConfigError(f"unsupported optimizer {self.optimizer!r}")
        if self.schedule not in ("cosine", "constant"):
            raise ConfigError(f"unsupported schedule {self.schedule!r}")

    def learning_rate(self, epoch: int) -> float:
        if self.schedule == "constant":
            return self.lr
        return self.lr_min + 0.5 * (self.lr - self.lr_min) * (1 + math.cos(math.pi * epoch / self.epochs))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class ClassifierModel:
    """Head parameters, batch-norm statistics and the train/eval mode flag."""

    params: dict
    running: dict
    n_classes: int
    dim_in: int
    dropout: float = DROPOUT
    training: bool = False
    config: Optional[dict] = None
    history: list = field(default_factory=list)

    @classmethod
    def init(cls, dim_in: int, n_classes: int, rng=None, zero_last: bool = False) -> "ClassifierModel":
        rng = seeded_rng(rng)
        widths = [dim_in, *HIDDEN, n_classes]
        params = {}
        for k, (a, b) in enumerate(zip(widths[:-1], widths[1:]), start=1):
            bound = 1.0 / math.sqrt(a)
            params[f"W{k}"] = rng.uniform(-bound, bound, size=(a, b))
            params[f"b{k}"] = rng.uniform(-bound, bound, size=b)
        if zero_last:
            params["W3"][:] = 0.0
            params["b3"][:] = 0.0
        running = {}
        for k, w in enumerate(HIDDEN, start=1):
            params[f"gamma{k}"] = np.ones(w)
            params[f"beta{k}"] = np.zeros(w)
            running[f"mean{k}"] = np.zeros(w)
            running[f"var{k}"] = np.ones(w)
        return cls(params, running, n_classes, dim_in)

    def train(self) -> "ClassifierModel":
        self.training = True
        return self

    def eval(self) -> "ClassifierModel":
        self.training = False
        return self

    # -- forward / backward ------------------------------------------------

    def _bn(self, z, k, cache, update):
        g, b = self.params[f"gamma{k}"], self.params[f"beta{k}"]
        if self.training:
            mu = z.mean(axis=0)
            var = z.var(axis=0)
            if update:
                n = z.shape[0]
                unbiased = var * n / max(n - 1, 1)
                self.running[f"mean{k}"] = (1 - BN_MOMENTUM) * self.running[f"mean{k}"] + BN_MOMENTUM * mu
                self.running[f"var{k}"] = (1 - BN_MOMENTUM) * self.running[f"var{k}"] + BN_MOMENTUM * unbiased
        else:
            mu, var = self.running[f"mean{k}"], self.running[f"var{k}"]
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (z - mu) * inv
        cache[f"xhat{k}"], cache[f"inv{k}"] = xhat, inv
        return g * xhat + b

    def forward(self, features, rng=None, cache: Optional[dict] = None, update_stats: bool = True):
        """Logits for a ``batch x K`` feature matrix.

        In train mode batch statistics are used (and folded into the running
        averages) and dropout needs ``rng``; eval mode is deterministic.
        """
        X = np.asarray(features, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.dim_in:
            raise DataError(f"classifier expects {self.dim_in} features, got {X.shape[1]}")
        if not np.all(np.isfinite(X)):
            raise DataError("features must be finite")
        c = {} if cache is None else cache
        p = self.params
        c["x"] = X
        h = self._bn(X @ p["W1"] + p["b1"], 1, c, update_stats)
        c["r1"] = h > 0
        a1 = np.where(c["r1"], h, 0.0)
        c["a1"] = a1
        z2 = a1 @ p["W2"] + p["b2"]
        if self.training and self.dropout > 0:
            if rng is None:
                raise ConfigError("train-mode forward needs an rng for dropout")
            keep = rng.random(z2.shape) >= self.dropout
            c["keep"] = keep
            z2 = np.where(keep, z2 / (1 - self.dropout), 0.0)
        h = self._bn(z2, 2, c, update_stats)
        c["r2"] = h > 0
        a2 = np.where(c["r2"], h, 0.0)
        c["a2"] = a2
        return a2 @ p["W3"] + p["b3"]

    def _bn_backward(self, dy, k, c, grads):
        xhat, inv = c[f"xhat{k}"], c[f"inv{k}"]
        grads[f"gamma{k}"] = (dy * xhat).sum(axis=0)
        grads[f"beta{k}"] = dy.sum(axis=0)
        dx = dy * self.params[f"gamma{k}"]
        n = dy.shape[0]
        return inv / n * (n * dx - dx.sum(axis=0) - xhat * (dx * xhat).sum(axis=0))

    def backward(self, dlogits, c) -> dict:
        p = self.params
        g = {}
        g["W3"] = c["a2"].T @ dlogits
        g["b3"] = dlogits.sum(axis=0)
        d = (dlogits @ p["W3"].T) * c["r2"]
        d = self._bn_backward(d, 2, c, g)
        if "keep" in c:
            d = np.where(c["keep"], d / (1 - self.dropout), 0.0)
        g["W2"] = c["a1"].T @ d
        g["b2"] = d.sum(axis=0)
        d = (d @ p["W2"].T) * c["r1"]
        d = self._bn_backward(d, 1, c, g)
        g["W1"] = c["x"].T @ d
        g["b1"] = d.sum(axis=0)
        return g

    def predict(self, features) -> np.ndarray:
        was = self.training
        self.training = False
        try:
            return self.forward(features).argmax(axis=1)
        finally:
            self.training = was

    # -- persistence --------------------------------------------------------

    def state_arrays(self) -> dict:
        out = {f"param_{k}": v for k, v in self.params.items()}
        out.update({f"running_{k}": v for k, v in self.running.items()})
        return out

    def save(self, path, meta: Optional[dict] = None) -> None:
        """Write an ``.npz`` checkpoint; ``meta`` is stored as embedded JSON."""
        doc = {
            "n_classes": self.n_classes,
            "dim_in": self.dim_in,
            "dropout": self.dropout,
            "train_config": self.config,
            "shapes": {k: list(v.shape) for k, v in self.state_arrays().items()},
        }
        doc.update(meta or {})
        buf = io.BytesIO()
        np.savez(buf, meta=np.frombuffer(json.dumps(doc, sort_keys=True).encode(), dtype=np.uint8), **self.state_arrays())
        atomic_write_bytes(path, buf.getvalue())

    @classmethod
    def load(cls, path) -> tuple["ClassifierModel", dict]:
        try:
            z = np.load(path, allow_pickle=False)
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read checkpoint {path}: {exc}") from None
        with z:
            meta = json.loads(bytes(z["meta"]).decode())
            params = {k[6:]: z[k].copy() for k in z.files if k.startswith("param_")}
            running = {k[8:]: z[k].copy() for k in z.files if k.startswith("running_")}
        model = cls(params, running, meta["n_classes"], meta["dim_in"], meta["dropout"], False, meta.get("train_config"))
        return model, meta


def softmax_cross_entropy(logits, labels) -> tuple[float, np.ndarray]:
    """Mean loss and its gradient with respect to the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(labels)
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def _check_labels(labels, n_classes):
    labels = np.asarray(labels, dtype=np.int64)
    if len(np.unique(labels)) < 2:
        raise DataError("training needs at least two classes")
    if labels.min() < 0:
        raise DataError("labels must be non-negative")
    return labels, int(n_classes or labels.max() + 1)


def train(
    features,
    labels,
    cfg: TrainConfig = TrainConfig(),
    n_classes: Optional[int] = None,
    feature_fn=None,
) -> ClassifierModel:
    """Fit a fresh head on precomputed features.

    ``feature_fn(epoch, rng)``, when given, replaces ``features`` each epoch
    (used for point-level augmentation); the first call fixes the width.
    """
    labels, n_classes = _check_labels(labels, n_classes)
    rng = seeded_rng(cfg.seed)
    X = np.asarray(features if feature_fn is None else feature_fn(0, rng), dtype=np.float64)
    if len(X) != len(labels):
        raise DataError("features and labels differ in length")
    model = ClassifierModel.init(X.shape[1], n_classes, rng)
    model.config = cfg.to_dict()
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    model.train()
    n = len(labels)
    for epoch in range(cfg.epochs):
        if feature_fn is not None and epoch > 0:
            X = np.asarray(feature_fn(epoch, rng), dtype=np.float64)
        lr = cfg.learning_rate(epoch)
        order = rng.permutation(n)
        total, correct, seen = 0.0, 0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            if len(idx) < 2:
                continue  # batch norm needs two samples
            cache = {}
            logits = model.forward(X[idx], rng, cache)
            loss, dlogits = softmax_cross_entropy(logits, labels[idx])
            grads = model.backward(dlogits, cache)
            for k, g in grads.items():
                if k[0] == "W" and cfg.weight_decay:
                    g = g + cfg.weight_decay * model.params[k]
                velocity[k] = cfg.momentum * velocity[k] + g
                model.params[k] -= lr * velocity[k]
            total += loss * len(idx)
            correct += int((logits.argmax(axis=1) == labels[idx]).sum())
            seen += len(idx)
        model.history.append({"epoch": epoch + 1, "lr": lr, "loss": total / max(seen, 1), "train_acc": correct / max(seen, 1)})
    return model.eval()


# ---------------------------------------------------------------------------
# features, training on clouds and evaluation


def global_features(
    clouds: Sequence[PointCloud],
    encoder: Encoder,
    pooling_kind: str,
    spec: Optional[CorruptionSpec] = None,
) -> np.ndarray:
    """Pooled embedding per cloud, each optionally corrupted first.

    Cloud ``i`` is corrupted with seed ``child_seed(spec.seed, i)`` so every
    cloud gets its own noise draw.
    """
    rows = []
    for i, pc in enumerate(clouds):
        if spec is not None:
            pc = corrupt(pc, dataclasses.replace(spec, seed=child_seed(spec.seed, i)))
        rows.append(pool_values(encoder.encode_cloud(pc), pooling_kind))
    return np.array(rows)


def augment(pc: PointCloud, rng, scale: bool = True, translate: bool = True) -> PointCloud:
    """Per-axis random scaling in [2/3, 3/2] and translation in [-0.2, 0.2]^3."""
    pts = pc.points
    if scale:
        pts = pts * rng.uniform(*AUG_SCALE, size=3)
    if translate:
        pts = pts + rng.uniform(-AUG_SHIFT, AUG_SHIFT, size=3)
    return pc.with_points(pts)


def train_on_clouds(
    clouds: Sequence[PointCloud],
    encoder: Encoder,
    pooling_kind: str,
    cfg: TrainConfig = TrainConfig(),
    n_classes: Optional[int] = None,
) -> ClassifierModel:
    labels = np.array([pc.label for pc in clouds])
    if any(pc.label is None for pc in clouds):
        raise DataError("every training cloud needs a label")
    if not (cfg.augment_scale or cfg.augment_translate):
        return train(global_features(clouds, encoder, pooling_kind), labels, cfg, n_classes)

    def feature_fn(epoch, rng):
        aug = [augment(pc, rng, cfg.augment_scale, cfg.augment_translate) for pc in clouds]
        return global_features(aug, encoder, pooling_kind)

    return train(None, labels, cfg, n_classes, feature_fn=feature_fn)


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    error_rate: float
    confusion: np.ndarray
    n: int


def evaluate_features(model: ClassifierModel, features, labels) -> EvalResult:
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    pred = model.predict(features)
    conf = np.zeros((model.n_classes, model.n_classes), dtype=np.int64)
    np.add.at(conf, (labels, pred), 1)
    acc = float((pred == labels).mean())
    return EvalResult(acc, 1.0 - acc, conf, len(labels))


def evaluate(
    model: ClassifierModel,
    encoder: Encoder,
    pooling_kind: str,
    dataset: Sequence[PointCloud],
    spec: Optional[CorruptionSpec] = None,
) -> EvalResult:
    if len(dataset) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    if model.training:
        raise ConfigError("evaluate needs the model in eval mode")
    feats = global_features(dataset, encoder, pooling_kind, spec)
    return evaluate_features(model, feats, [pc.label for pc in dataset])
