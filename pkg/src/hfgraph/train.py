"""Losses for class-imbalanced binary node classification, the Adam
optimizer, and the masked transductive training loop with early stopping
on validation F1.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import metrics
from .gnn import GnnModel, GraphContext
from .graph import SimilarityGraph

LOSS_KINDS = ("bce", "wbce", "focal")
EPS = 1e-12


@dataclass(frozen=True)
class LossConfig:
    kind: str = "bce"
    pos_weight: Optional[float] = None  # wbce; None -> #neg/#pos on train mask
    alpha: float = 0.75
    gamma: float = 1.0

    def validate(self) -> None:
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind == "wbce" and self.pos_weight is not None and self.pos_weight <= 0:
            raise ValueError("pos_weight must be positive")
        if self.kind == "focal":
            if not (0.0 < self.alpha < 1.0):
                raise ValueError("focal alpha must be in (0,1)")
            if self.gamma < 0.0:
                raise ValueError("focal gamma must be >= 0")

    def resolved(self, labels: np.ndarray, train_mask: np.ndarray) -> "LossConfig":
        """Fill the default pos_weight from train-mask class counts."""
        if self.kind != "wbce" or self.pos_weight is not None:
            return self
        y = labels[train_mask]
        n_pos = int(np.count_nonzero(y == 1))
        n_neg = int(np.count_nonzero(y == 0))
        if n_pos == 0:
            raise ValueError("train mask has no positives; pos_weight undefined")
        return replace(self, pos_weight=n_neg / n_pos)


@dataclass
class TrainConfig:
    epochs: int = 200
    lr: float = 1e-3
    weight_decay: float = 5e-4
    patience: int = 30  # 0 disables early stopping
    seed: int = 1
    threshold: float = 0.5

    def validate(self) -> None:
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if self.patience >= self.epochs:
            raise ValueError("patience must be smaller than epochs")


def masked_loss(
    p: ad.Tensor, labels: np.ndarray, mask: np.ndarray, config: LossConfig
) -> ad.Tensor:
    """Mean loss over masked nodes; p is the (n,1) probability tensor."""
    config.validate()
    idx = np.flatnonzero(np.asarray(mask, dtype=bool))
    if idx.size == 0:
        raise ValueError("cannot compute a loss over an empty mask")
    y = np.asarray(labels, dtype=np.float64)[idx].reshape(-1, 1)
    pm = ad.clamp(ad.row_gather(p, idx), EPS, 1.0 - EPS)
    yc = ad.constant(y)
    yn = ad.constant(1.0 - y)
    one_minus_p = ad.add_scalar(ad.mul_scalar(pm, -1.0), 1.0)

    if config.kind == "bce":
        terms = ad.add(ad.mul(yc, ad.log(pm)), ad.mul(yn, ad.log(one_minus_p)))
        return ad.mul_scalar(ad.mean_rows(terms), -1.0)
    if config.kind == "wbce":
        cfg = config.resolved(labels, mask)
        pos = ad.mul_scalar(ad.mul(yc, ad.log(pm)), float(cfg.pos_weight))
        terms = ad.add(pos, ad.mul(yn, ad.log(one_minus_p)))
        return ad.mul_scalar(ad.mean_rows(terms), -1.0)
    # focal: -alpha_t (1 - p_t)^gamma log(p_t)
    pt = ad.add(ad.mul(yc, pm), ad.mul(yn, one_minus_p))
    alpha_t = ad.constant(config.alpha * y + (1.0 - config.alpha) * (1.0 - y))
    one_minus_pt = ad.add_scalar(ad.mul_scalar(pt, -1.0), 1.0)
    focus = ad.pow_scalar(one_minus_pt, config.gamma)
    terms = ad.mul(alpha_t, ad.mul(focus, ad.log(pt)))
    return ad.mul_scalar(ad.mean_rows(terms), -1.0)


# ---------------------------------------------------------------------------
# Adam with decoupled weight decay


def adam_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: dict,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> list[np.ndarray]:
    """One Adam update; `state` holds m, v, and the step counter t."""
    if "t" not in state:
        state["t"] = 0
        state["m"] = [np.zeros_like(p) for p in params]
        state["v"] = [np.zeros_like(p) for p in params]
    if len(state["m"]) != len(params):
        raise ValueError("optimizer state does not match parameter list")
    b1, b2 = betas
    state["t"] += 1
    t = state["t"]
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ValueError(f"param/grad shape mismatch at index {i}")
        state["m"][i] = b1 * state["m"][i] + (1.0 - b1) * g
        state["v"][i] = b2 * state["v"][i] + (1.0 - b2) * g * g
        m_hat = state["m"][i] / (1.0 - b1**t)
        v_hat = state["v"][i] / (1.0 - b2**t)
        new_p = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        if weight_decay > 0.0:
            new_p = new_p - lr * weight_decay * p
        out.append(new_p)
    return out


class Adam:
    """Stateful wrapper binding adam_step to a model's parameter tensors."""

    def __init__(self, tensors: list[ad.Tensor], lr: float, weight_decay: float = 0.0):
        self.tensors = tensors
        self.lr = lr
        self.weight_decay = weight_decay
        self.state: dict = {}

    def step(self) -> None:
        params = [t.data for t in self.tensors]
        grads = [
            t.grad if t.grad is not None else np.zeros_like(t.data)
            for t in self.tensors
        ]
        updated = adam_step(
            params,
            grads,
            self.state,
            self.lr,
            weight_decay=self.weight_decay,
        )
        for t, new in zip(self.tensors, updated):
            t.data = new

    def zero_grad(self) -> None:
        for t in self.tensors:
            t.zero_grad()


# ---------------------------------------------------------------------------
# training loop


def train_model(
    model: GnnModel,
    graph: SimilarityGraph,
    loss_config: LossConfig,
    train_config: TrainConfig,
    verbose: bool = False,
) -> tuple[GnnModel, list[dict]]:
    """Full-batch transductive training with best-val-F1 snapshotting.

    Returns the model restored to its best validation epoch plus a history
    of per-epoch train loss and validation metrics.
    """
    train_config.validate()
    loss_config = loss_config.resolved(graph.labels, graph.mask("train"))
    loss_config.validate()
    train_mask = graph.mask("train")
    val_mask = graph.mask("val")
    ctx = GraphContext(graph)
    optimizer = Adam(model.parameters(), train_config.lr, train_config.weight_decay)

    history: list[dict] = []
    best_f1 = -1.0
    best_state = model.snapshot()
    stale = 0
    for epoch in range(1, train_config.epochs + 1):
        with ad.Tape() as tape:
            p, _ = model.forward(graph.features, ctx, training=True)
            loss = masked_loss(p, graph.labels, train_mask, loss_config)
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                raise RuntimeError(f"training diverged (non-finite loss) at epoch {epoch}")
            optimizer.zero_grad()
            tape.backward(loss)
        optimizer.step()

        p_eval, _ = model.forward(graph.features, ctx, training=False)
        probs = p_eval.data[:, 0]
        cm = metrics.confusion(probs, graph.labels, val_mask, train_config.threshold)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # early epochs may predict one class
            val_f1 = metrics.threshold_metrics(cm)["f1"]
        val_auroc = metrics.auroc(probs, graph.labels, val_mask)
        val_auprc = metrics.auprc(probs, graph.labels, val_mask)
        history.append(
            {
                "epoch": epoch,
                "train_loss": loss_value,
                "val_f1": val_f1,
                "val_auroc": val_auroc,
                "val_auprc": val_auprc,
            }
        )
        if verbose and (epoch == 1 or epoch % 20 == 0):
            print(
                f"epoch {epoch:4d}  loss {loss_value:.4f}  val_f1 {val_f1:.4f}  "
                f"val_auroc {val_auroc:.4f}"
            )

        if val_f1 > best_f1:
            best_f1 = val_f1
            best_state = model.snapshot()
            stale = 0
        else:
            stale += 1
            if train_config.patience > 0 and stale >= train_config.patience:
                if verbose:
                    print(f"early stop at epoch {epoch} (best val_f1 {best_f1:.4f})")
                break

    model.restore(best_state)
    return model, history


def save_history(path, history: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_f1,val_auroc,val_auprc\n")
        for row in history:
            fh.write(
                f"{row['epoch']},{repr(row['train_loss'])},{repr(row['val_f1'])},"
                f"{repr(row['val_auroc'])},{repr(row['val_auprc'])}\n"
            )


def load_history(path) -> list[dict]:
    history = []
    with open(path, "r", encoding="utf-8") as fh:
        fh.readline()
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) != 5:
                continue
            history.append(
                {
                    "epoch": int(parts[0]),
                    "train_loss": float(parts[1]),
                    "val_f1": float(parts[2]),
                    "val_auroc": float(parts[3]),
                    "val_auprc": float(parts[4]),
                }
            )
    return history


def summarize_seeds(values: list[float]) -> tuple[float, float]:
    """Mean and population standard deviation over seed repeats."""
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())
