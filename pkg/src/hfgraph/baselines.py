"""Non-graph baselines over the same node features and masks as the GNNs:
logistic regression (gradient descent on BCE), a cosine KNN classifier, and
a feed-forward MLP trained through the shared autodiff substrate.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .graph import SimilarityGraph
from .train import LossConfig, TrainConfig, train_model

BASELINE_KINDS = ("logreg", "knn", "mlp")


@dataclass
class BaselineConfig:
    kind: str = "logreg"
    k: int = 5  # knn
    hidden: tuple[int, ...] = (64, 32)  # mlp
    lr: float = 0.1  # logreg gradient descent
    epochs: int = 500
    weight_decay: float = 0.0
    seed: int = 1

    def validate(self) -> None:
        if self.kind not in BASELINE_KINDS:
            raise ValueError(f"unknown baseline kind {self.kind!r}")
        if self.kind == "knn" and self.k <= 0:
            raise ValueError("knn k must be positive")
        if self.kind == "mlp" and (not self.hidden or any(h <= 0 for h in self.hidden)):
            raise ValueError("mlp hidden sizes must be positive")
        if self.lr <= 0 or self.epochs <= 0:
            raise ValueError("lr and epochs must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")


class LogReg:
    """Binary logistic regression fit by full-batch gradient descent."""

    def __init__(self, dim: int):
        self.w = np.zeros(dim)
        self.b = 0.0

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        z = features @ self.w + self.b
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out

    def fit(
        self,
        features: np.ndarray,
        labels: np.ndarray,
        lr: float,
        epochs: int,
        weight_decay: float = 0.0,
    ) -> None:
        y = labels.astype(np.float64)
        n = features.shape[0]
        for _ in range(epochs):
            p = self.predict_proba(features)
            err = p - y
            grad_w = features.T @ err / n + weight_decay * self.w
            grad_b = float(err.mean())
            self.w -= lr * grad_w
            self.b -= lr * grad_b


class KnnClassifier:
    """Score = fraction of positive labels among the k most cosine-similar
    training points (ties broken toward the lower training index)."""

    def __init__(self, k: int):
        self.k = k
        self.train_features: Optional[np.ndarray] = None
        self.train_labels: Optional[np.ndarray] = None

    def fit(self, features: np.ndarray, labels: np.ndarray) -> None:
        if self.k > features.shape[0]:
            raise ValueError(
                f"k={self.k} exceeds training set size {features.shape[0]}"
            )
        norms = np.linalg.norm(features, axis=1, keepdims=True)
        if np.any(norms == 0.0):
            raise ValueError("cosine KNN cannot index zero vectors")
        self.train_features = features / norms
        self.train_labels = labels.astype(np.float64)

    def predict_proba(self, features: np.ndarray, block_size: int = 512) -> np.ndarray:
        if self.train_features is None:
            raise ValueError("classifier is not fitted")
        norms = np.linalg.norm(features, axis=1, keepdims=True)
        if np.any(norms == 0.0):
            raise ValueError("cosine KNN cannot score zero vectors")
        queries = features / norms
        out = np.empty(queries.shape[0])
        for start in range(0, queries.shape[0], block_size):
            stop = min(start + block_size, queries.shape[0])
            sims = queries[start:stop] @ self.train_features.T
            top = np.argsort(-sims, axis=1, kind="stable")[:, : self.k]
            out[start:stop] = self.train_labels[top].mean(axis=1)
        return out


class MlpModel:
    """Feed-forward net exposing the same surface as GnnModel so the shared
    training loop (forward / parameters / snapshot / restore) applies."""

    def __init__(self, in_dim: int, hidden: tuple[int, ...], seed: int = 0):
        rng = np.random.default_rng(seed)
        dims = [in_dim, *hidden, 1]
        self.weights = []
        self.biases = []
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            limit = np.sqrt(6.0 / (d_in + d_out))
            self.weights.append(
                ad.Tensor(rng.uniform(-limit, limit, size=(d_in, d_out)), requires_grad=True)
            )
            self.biases.append(ad.Tensor(np.zeros((1, d_out)), requires_grad=True))

    def forward(self, features: np.ndarray, ctx=None, training: bool = False):
        h = ad.constant(np.asarray(features, dtype=np.float64))
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = ad.add(ad.matmul(h, W), b)
            if i < last:
                h = ad.relu(h)
        return ad.sigmoid(h), None

    def parameters(self) -> list[ad.Tensor]:
        return [*self.weights, *self.biases]

    def named_parameters(self) -> list[tuple[str, ad.Tensor]]:
        named = []
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            named += [(f"fc{i}.W", W), (f"fc{i}.b", b)]
        return named

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def restore(self, state: dict[str, np.ndarray]) -> None:
        for name, t in self.named_parameters():
            t.data = state[name].copy()


def majority_probabilities(labels: np.ndarray, train_mask: np.ndarray) -> np.ndarray:
    """Constant score equal to the train-mask positive rate."""
    rate = float(np.mean(labels[train_mask] == 1))
    return np.full(labels.shape[0], rate)


def fit_predict(
    config: BaselineConfig, graph: SimilarityGraph
) -> np.ndarray:
    """Train the configured baseline on the graph's train mask and return a
    probability for every node (the same feature rows the GNN consumes)."""
    config.validate()
    features = graph.features
    labels = graph.labels
    train_mask = graph.mask("train")
    if not np.any(labels[train_mask] == 1) or not np.any(labels[train_mask] == 0):
        raise ValueError("train mask must contain both classes")

    if config.kind == "logreg":
        model = LogReg(features.shape[1])
        model.fit(
            features[train_mask],
            labels[train_mask],
            lr=config.lr,
            epochs=config.epochs,
            weight_decay=config.weight_decay,
        )
        return model.predict_proba(features)

    if config.kind == "knn":
        clf = KnnClassifier(config.k)
        clf.fit(features[train_mask], labels[train_mask])
        return clf.predict_proba(features)

    mlp = MlpModel(features.shape[1], tuple(config.hidden), seed=config.seed)
    train_cfg = TrainConfig(
        epochs=config.epochs,
        lr=1e-3,
        weight_decay=config.weight_decay,
        patience=min(30, config.epochs - 1),
        seed=config.seed,
    )
    train_model(mlp, graph, LossConfig(kind="bce"), train_cfg)
    p, _ = mlp.forward(features)
    return p.data[:, 0].copy()
