"""Multi-task hierarchical classification head over frozen embeddings.

One softmax head per hierarchy level, optionally on top of a shared ReLU
layer. The loss is the lambda-weighted sum over levels of the summed
per-example cross-entropies against that level's labels.
"""

from __future__ import annotations

import copy
import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dataset_io import LabeledDataset, make_rng
from .hierarchy import Hierarchy

EPS = 1e-12
INIT_SCALE = 0.01


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class MultiTaskModel:
    dim: int
    level_sizes: list[int]
    lambdas: list[float]
    hidden: Optional[int] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.lambdas) != len(self.level_sizes):
            raise ValueError("need one lambda per level")
        if any(l < 0 for l in self.lambdas) or sum(self.lambdas) <= 0:
            raise ValueError("lambdas must be non-negative with a positive sum")
        for name, shape in self.param_shapes().items():
            if name in self.params and self.params[name].shape != shape:
                raise ValueError(f"parameter {name} has shape {self.params[name].shape}, expected {shape}")

    @property
    def n_levels(self) -> int:
        return len(self.level_sizes)

    @property
    def feature_width(self) -> int:
        return self.hidden if self.hidden else self.dim

    def param_shapes(self) -> dict[str, tuple]:
        shapes = {}
        if self.hidden:
            shapes["shared_W"] = (self.hidden, self.dim)
            shapes["shared_b"] = (self.hidden,)
        for t, n in enumerate(self.level_sizes, start=1):
            shapes[f"head{t}_W"] = (n, self.feature_width)
            shapes[f"head{t}_b"] = (n,)
        return shapes

    def copy(self) -> "MultiTaskModel":
        return copy.deepcopy(self)

    def to_json(self) -> dict:
        return {
            "dim": self.dim,
            "hidden": self.hidden,
            "levels": list(self.level_sizes),
            "lambdas": list(self.lambdas),
            "params": {k: v.tolist() for k, v in self.params.items()},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MultiTaskModel":
        params = {k: np.array(v, dtype=np.float64) for k, v in obj["params"].items()}
        return cls(int(obj["dim"]), list(obj["levels"]), list(obj["lambdas"]), obj.get("hidden"), params)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "MultiTaskModel":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def init_model(dim, level_sizes, lambdas=None, hidden=None, seed=0) -> MultiTaskModel:
    """Weights ~ U[-0.01, 0.01] from a seeded PCG64 stream, biases zero."""
    level_sizes = list(level_sizes)
    if lambdas is None:
        lambdas = [1.0 / len(level_sizes)] * len(level_sizes)
    model = MultiTaskModel(dim, level_sizes, list(lambdas), hidden or None)
    rng = make_rng(seed)
    for name, shape in model.param_shapes().items():
        if name.endswith("_W"):
            model.params[name] = rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)
        else:
            model.params[name] = np.zeros(shape)
    return model


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(p, y: int) -> float:
    p = np.asarray(p, dtype=np.float64)
    if not (0 <= y < p.shape[-1]):
        raise IndexError(f"class index {y} out of range for {p.shape[-1]} classes")
    return -math.log(max(float(p[y]), EPS))


def _as_batch(batch, dim: int):
    if isinstance(batch, tuple) and len(batch) == 2 and isinstance(batch[0], np.ndarray) and batch[0].ndim == 2:
        X, y = batch
    else:
        X = np.array([np.asarray(f, dtype=np.float64) for f, _ in batch])
        y = np.array([int(c) for _, c in batch], dtype=np.int64)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("empty batch")
    if X.ndim != 2 or X.shape[1] != dim:
        raise ValueError(f"feature length {X.shape[-1]} does not match model dim {dim}")
    return X, y


def _forward(model: MultiTaskModel, X: np.ndarray):
    if model.hidden:
        pre = X @ model.params["shared_W"].T + model.params["shared_b"]
        feat = np.maximum(pre, 0.0)
    else:
        pre = None
        feat = X
    probs = [
        softmax(feat @ model.params[f"head{t}_W"].T + model.params[f"head{t}_b"])
        for t in range(1, model.n_levels + 1)
    ]
    return pre, feat, probs


def _level_targets(model: MultiTaskModel, hierarchy: Hierarchy, y: np.ndarray) -> list[np.ndarray]:
    if model.n_levels > hierarchy.n_levels:
        raise ValueError(f"model has {model.n_levels} heads but hierarchy only {hierarchy.n_levels} levels")
    if np.any(y < 0) or np.any(y >= hierarchy.level_size(1)):
        raise ValueError("category index out of range")
    targets = []
    for t in range(1, model.n_levels + 1):
        if model.level_sizes[t - 1] != hierarchy.level_size(t):
            raise ValueError(f"head {t} width {model.level_sizes[t - 1]} != level size {hierarchy.level_size(t)}")
        targets.append(hierarchy.level_labels(t)[y])
    return targets


def predict(model: MultiTaskModel, features) -> list[np.ndarray]:
    """Per-level class probabilities; a 1-d input gives 1-d outputs."""
    X = np.asarray(features, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != model.dim:
        raise ValueError(f"feature length {X.shape[1]} does not match model dim {model.dim}")
    probs = _forward(model, X)[2]
    return [p[0] for p in probs] if single else probs


def multitask_loss(model: MultiTaskModel, batch, hierarchy: Hierarchy) -> float:
    X, y = _as_batch(batch, model.dim)
    targets = _level_targets(model, hierarchy, y)
    probs = _forward(model, X)[2]
    total = 0.0
    for lam, p, tgt in zip(model.lambdas, probs, targets):
        total += lam * sum(cross_entropy(p[i], int(tgt[i])) for i in range(len(tgt)))
    return total


def loss_gradient(model: MultiTaskModel, batch, hierarchy: Hierarchy) -> dict[str, np.ndarray]:
    """Gradient of :func:`multitask_loss` for every parameter array.

    Uses the softmax/cross-entropy identity d/dlogits = p - onehot, i.e. the
    derivative away from the 1e-12 probability clamp.
    """
    X, y = _as_batch(batch, model.dim)
    targets = _level_targets(model, hierarchy, y)
    pre, feat, probs = _forward(model, X)
    grads: dict[str, np.ndarray] = {}
    dfeat = np.zeros_like(feat)
    rows = np.arange(len(y))
    for t, (lam, p, tgt) in enumerate(zip(model.lambdas, probs, targets), start=1):
        dlogits = p.copy()
        dlogits[rows, tgt] -= 1.0
        dlogits *= lam
        grads[f"head{t}_W"] = dlogits.T @ feat
        grads[f"head{t}_b"] = dlogits.sum(axis=0)
        dfeat += dlogits @ model.params[f"head{t}_W"]
    if model.hidden:
        dpre = dfeat * (pre > 0)
        grads["shared_W"] = dpre.T @ X
        grads["shared_b"] = dpre.sum(axis=0)
    return grads


# ---------------------------------------------------------------- evaluation


@dataclass
class ClassificationMetrics:
    top1: float
    cluster_top1: float
    n: int
    n_correct: int
    n_cluster_correct: int
    per_category: dict
    confusion: np.ndarray

    def to_json(self) -> dict:
        return {
            "top1": self.top1,
            "cluster_top1": self.cluster_top1,
            "n": self.n,
            "n_correct": self.n_correct,
            "n_cluster_correct": self.n_cluster_correct,
            "per_category_accuracy": self.per_category,
            "confusion": self.confusion.tolist(),
        }


def metrics_from_predictions(pred: np.ndarray, truth: np.ndarray, hierarchy: Hierarchy) -> ClassificationMetrics:
    """Top-1 and cluster top-1 from predicted vs true category indices.

    A prediction counts for cluster top-1 when the predicted category sits
    in the same level-2 cluster as the true one.
    """
    n_cat = hierarchy.level_size(1)
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if len(pred) == 0:
        raise ValueError("empty evaluation set")
    cluster_level = 2 if hierarchy.n_levels >= 2 else 1
    clusters = hierarchy.level_labels(cluster_level)
    n_correct = int(np.sum(pred == truth))
    n_cluster = int(np.sum(clusters[pred] == clusters[truth]))
    confusion = np.zeros((n_cat, n_cat), dtype=np.int64)
    np.add.at(confusion, (truth, pred), 1)
    per_cat = {}
    for i, cat in enumerate(hierarchy.categories):
        total = int(confusion[i].sum())
        if total:
            per_cat[cat] = float(confusion[i, i] / total)
    n = len(pred)
    return ClassificationMetrics(n_correct / n, n_cluster / n, n, n_correct, n_cluster, per_cat, confusion)


def evaluate_classification(model: MultiTaskModel, test: LabeledDataset, hierarchy: Hierarchy) -> ClassificationMetrics:
    probs = predict(model, test.features)
    pred = np.argmax(probs[0], axis=1)  # lowest index on ties
    truth = np.array([hierarchy._index[l] for l in test.labels], dtype=np.int64)
    return metrics_from_predictions(pred, truth, hierarchy)


# ---------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 20
    learning_rate: float = 0.05
    fine_tune_rate: float = 0.005
    fine_tune_epochs: int = 0
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0 or self.fine_tune_rate <= 0:
            raise ValueError("learning rates must be positive")
        if self.epochs < 0 or self.fine_tune_epochs < 0:
            raise ValueError("epoch counts must be non-negative")


def _dataset_targets(ds: LabeledDataset, hierarchy: Hierarchy) -> np.ndarray:
    return np.array([hierarchy._index[l] for l in ds.labels], dtype=np.int64)


def train(
    model: MultiTaskModel,
    train_set: LabeledDataset,
    val_set: Optional[LabeledDataset],
    hierarchy: Hierarchy,
    config: TrainConfig = TrainConfig(),
):
    """Mini-batch SGD, then an optional fine-tune phase at the smaller rate.

    Each step moves by ``rate * grad / batch_len``. The fine-tune phase
    restarts from the best phase-one parameters. Returns the parameters with
    the best validation top-1 (earliest on ties; last epoch when there is no
    validation data) and the per-epoch log rows.
    """
    if len(train_set) == 0:
        raise ValueError("empty training set")
    if train_set.dim != model.dim:
        raise ValueError(f"data dim {train_set.dim} does not match model dim {model.dim}")
    X = train_set.features
    y = _dataset_targets(train_set, hierarchy)
    _level_targets(model, hierarchy, y[:1])
    has_val = val_set is not None and len(val_set) > 0
    rng = make_rng(config.seed)

    current = model.copy()
    best, best_score = current.copy(), -1.0
    history: list[dict] = []
    epoch_no = 0
    phases = [("train", config.learning_rate, config.epochs), ("finetune", config.fine_tune_rate, config.fine_tune_epochs)]
    # overflow is caught below as a non-finite loss
    with np.errstate(over="ignore", invalid="ignore"):
        for phase, rate, n_epochs in phases:
            if phase == "finetune":
                current = best.copy()
            for _ in range(n_epochs):
                epoch_no += 1
                order = rng.permutation(len(y)) if config.shuffle else np.arange(len(y))
                for start in range(0, len(order), config.batch_size):
                    idx = order[start : start + config.batch_size]
                    grads = loss_gradient(current, (X[idx], y[idx]), hierarchy)
                    for name, g in grads.items():
                        current.params[name] -= rate * g / len(idx)
                train_loss = multitask_loss(current, (X, y), hierarchy) / len(y)
                if not math.isfinite(train_loss) or not all(np.all(np.isfinite(v)) for v in current.params.values()):
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch_no} ({phase}, rate {rate})")
                if has_val:
                    m = evaluate_classification(current, val_set, hierarchy)
                    val_top1, val_cluster = m.top1, m.cluster_top1
                else:
                    val_top1 = val_cluster = float("nan")
                history.append(
                    {
                        "epoch": epoch_no,
                        "phase": phase,
                        "train_loss": train_loss,
                        "val_top1": val_top1,
                        "val_cluster_top1": val_cluster,
                    }
                )
                score = val_top1 if has_val else float(epoch_no)
                if score > best_score:
                    best, best_score = current.copy(), score
    return best, history


LOG_FIELDS = ("epoch", "phase", "train_loss", "val_top1", "val_cluster_top1")


def write_train_log(history: Sequence[dict], path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_FIELDS)
        for row in history:
            w.writerow(
                [row["epoch"], row["phase"]]
                + [f"{row[k]:.6f}" for k in ("train_loss", "val_top1", "val_cluster_top1")]
            )

