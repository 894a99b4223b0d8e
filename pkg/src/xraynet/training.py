"""Training loop, cross-entropy loss, SGD/Adam, and evaluation passes.

Every source of randomness is derived from ``TrainConfig.seed``: the
per-epoch shuffle comes from (seed, epoch) and each augmentation draw
from (seed, sample index, epoch), so a fixed seed reproduces the full
training history bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import data as dt
from . import models, ops
from .ioutil import write_text_atomic
from .tensor import ShapeError, Tensor


class TrainingDiverged(RuntimeError):
    """Loss left the finite range during training."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 16
    lr: float = 1e-3
    optimizer: str = "adam"  # adam | sgd
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    augment: bool = True
    augment_spec: dt.AugmentSpec = field(default_factory=dt.AugmentSpec)
    # Optional early exits so desk-scale runs stop once converged.
    stop_at_train_accuracy: float | None = None
    stop_at_val_accuracy: float | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


TrainHistory = list[EpochRecord]


# ---------------------------------------------------------------------------
# loss


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=1, keepdims=True))


def _check_labels(n: int, classes: int, labels: Sequence[int]) -> np.ndarray:
    lab = np.asarray(labels)
    if lab.shape != (n,):
        raise ShapeError(f"need {n} labels, got shape {lab.shape}")
    if lab.size and (lab.min() < 0 or lab.max() >= classes):
        raise ValueError(f"labels must lie in [0, {classes}), got range [{lab.min()}, {lab.max()}]")
    return lab.astype(np.int64)


def cross_entropy(logits: ad.Node, labels: Sequence[int]) -> ad.Node:
    """Mean softmax cross-entropy of (N,K) logits as a scalar node."""
    z = logits.value.numpy()
    if z.ndim != 2:
        raise ShapeError(f"cross_entropy expects (N,K) logits, got shape {logits.value.shape}")
    n, k = z.shape
    lab = _check_labels(n, k, labels)
    logp = _log_softmax(z)
    val = float(-logp[np.arange(n), lab].mean())

    def bwd(g: np.ndarray) -> None:
        probs = np.exp(logp)
        probs[np.arange(n), lab] -= 1.0
        logits.add_grad(probs * (g.reshape(-1)[0] / n))

    return ad.Node(Tensor._wrap(np.asarray([val], dtype=z.dtype)), (logits,), bwd)


def cross_entropy_value(logits: Tensor, labels: Sequence[int]) -> float:
    """Loss value only, for evaluation passes that need no gradient."""
    z = logits.numpy().astype(np.float64)
    lab = _check_labels(z.shape[0], z.shape[1], labels)
    return float(-_log_softmax(z)[np.arange(z.shape[0]), lab].mean())


# ---------------------------------------------------------------------------
# optimizers


def init_sgd_state() -> dict:
    return {"kind": "sgd", "v": {}}


def init_adam_state() -> dict:
    return {"kind": "adam", "t": 0, "m": {}, "v": {}}


def sgd_step(params: Sequence[ad.Parameter], state: dict, lr: float, momentum: float = 0.0) -> None:
    """v <- momentum*v + grad; w <- w - lr*v (plain SGD when momentum=0)."""
    for p in params:
        if not p.trainable:
            continue
        v = state["v"].get(p.name)
        if v is None:
            v = np.zeros(p.value.shape, dtype=p.value.dtype)
        v = momentum * v + p.grad
        state["v"][p.name] = v
        p.value = Tensor._wrap(p.value.numpy() - lr * v)


def adam_step(
    params: Sequence[ad.Parameter],
    state: dict,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Adam with bias correction; one shared step counter for all params."""
    state["t"] += 1
    t = state["t"]
    for p in params:
        if not p.trainable:
            continue
        g = p.grad
        m = state["m"].get(p.name)
        v = state["v"].get(p.name)
        if m is None:
            m = np.zeros(p.value.shape, dtype=p.value.dtype)
            v = np.zeros(p.value.shape, dtype=p.value.dtype)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * (g * g)
        state["m"][p.name] = m
        state["v"][p.name] = v
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        p.value = Tensor._wrap(p.value.numpy() - lr * m_hat / (np.sqrt(v_hat) + eps))


# ---------------------------------------------------------------------------
# data plumbing


def _split_samples(manifest: dt.DatasetManifest, split: str) -> tuple[list[str], list[int]]:
    rows = manifest.rows_for(split)
    if not rows:
        raise dt.DataError(f"split {split!r} is empty")
    paths, labels = [], []
    for r in rows:
        if r.label not in dt.LABEL_TO_INDEX:
            raise dt.DataError(f"unknown label {r.label!r} for {r.path!r}; expected one of {list(dt.LABELS)}")
        paths.append(r.path)
        labels.append(dt.LABEL_TO_INDEX[r.label])
    return paths, labels


def _preprocessed_batch(images: list[Tensor], target: tuple[int, int, int]) -> Tensor:
    return Tensor._wrap(np.stack([dt.preprocess(im, target).numpy() for im in images]))


def _batched_eval(
    model: models.ModelGraph, xs: list[Tensor], labels: list[int], batch_size: int
) -> tuple[float, float, np.ndarray, list[int]]:
    """Eval-mode loss, accuracy, class-1 probabilities, and predictions."""
    target = model.input_shape
    n = len(xs)
    loss_sum, correct = 0.0, 0
    scores = np.zeros(n, dtype=np.float64)
    preds: list[int] = []
    for start in range(0, n, batch_size):
        chunk = slice(start, min(start + batch_size, n))
        batch = _preprocessed_batch(xs[chunk], target)
        lab = labels[chunk]
        logits = models.forward(model, batch, "eval")
        loss_sum += cross_entropy_value(logits, lab) * (chunk.stop - chunk.start)
        z = logits.numpy()
        chunk_preds = z.argmax(axis=1)
        preds.extend(int(v) for v in chunk_preds)
        correct += int((chunk_preds == np.asarray(lab)).sum())
        scores[chunk] = ops.softmax(logits).numpy()[:, 1]
    return loss_sum / n, correct / n, scores, preds


# ---------------------------------------------------------------------------
# training


def train(model: models.ModelGraph, manifest: dt.DatasetManifest, config: TrainConfig) -> tuple[models.ModelGraph, TrainHistory]:
    """Fit the model on the manifest's train split, validating per epoch.

    Returns the (mutated in place) model and one EpochRecord per epoch
    run. Raises TrainingDiverged naming the epoch and batch if the loss
    leaves the finite range.
    """
    train_paths, train_labels = _split_samples(manifest, "train")
    val_paths, val_labels = _split_samples(manifest, "val")
    raw = [dt.load_image(p) for p in train_paths]
    val_raw = [dt.load_image(p) for p in val_paths]
    target = model.input_shape

    if config.optimizer == "adam":
        state = init_adam_state()
    else:
        state = init_sgd_state()

    history: TrainHistory = []
    n = len(raw)
    for epoch in range(1, config.epochs + 1):
        rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), int(epoch)]))
        order = rng.permutation(n)
        loss_sum, correct = 0.0, 0
        for bi, start in enumerate(range(0, n, config.batch_size), start=1):
            idx = order[start : start + config.batch_size]
            xs = []
            for j in idx:
                img = raw[int(j)]
                if config.augment:
                    img = dt.augment(img, config.augment_spec, dt.augment_seed(config.seed, int(j), epoch))
                xs.append(img)
            batch = _preprocessed_batch(xs, target)
            lab = [train_labels[int(j)] for j in idx]
            logits_node = models.forward_node(model, batch, "train")
            loss_node = cross_entropy(logits_node, lab)
            loss_val = loss_node.value.item()
            if not np.isfinite(loss_val):
                raise TrainingDiverged(f"non-finite loss {loss_val} at epoch {epoch} batch {bi}")
            model.zero_grads()
            ad.backward(loss_node)
            if config.optimizer == "adam":
                adam_step(list(model.params.values()), state, config.lr, config.beta1, config.beta2, config.adam_eps)
            else:
                sgd_step(list(model.params.values()), state, config.lr, config.momentum)
            loss_sum += loss_val * len(idx)
            correct += int((logits_node.value.numpy().argmax(axis=1) == np.asarray(lab)).sum())
        train_loss, train_acc = loss_sum / n, correct / n
        val_loss, val_acc, _, _ = _batched_eval(model, val_raw, val_labels, config.batch_size)
        history.append(EpochRecord(epoch, train_loss, train_acc, val_loss, val_acc))
        if config.stop_at_train_accuracy is not None and train_acc >= config.stop_at_train_accuracy:
            break
        if config.stop_at_val_accuracy is not None and val_acc >= config.stop_at_val_accuracy:
            break
    return model, history


def evaluate_accuracy(model: models.ModelGraph, manifest: dt.DatasetManifest, split: str, batch_size: int = 32) -> tuple[float, float]:
    """Eval-mode (loss, accuracy) over one split; augmentation never applies."""
    paths, labels = _split_samples(manifest, split)
    xs = [dt.load_image(p) for p in paths]
    loss, acc, _, _ = _batched_eval(model, xs, labels, batch_size)
    return loss, acc


def predict_scores(model: models.ModelGraph, manifest: dt.DatasetManifest, split: str, batch_size: int = 32) -> tuple[list[int], np.ndarray, list[int]]:
    """Per-sample (true labels, class-1 probabilities, argmax predictions)."""
    paths, labels = _split_samples(manifest, split)
    xs = [dt.load_image(p) for p in paths]
    _, _, scores, preds = _batched_eval(model, xs, labels, batch_size)
    return labels, scores, preds


def write_metrics_csv(history: TrainHistory, path: str) -> None:
    """One row per epoch: epoch,train_loss,train_acc,val_loss,val_acc."""
    lines = ["epoch,train_loss,train_acc,val_loss,val_acc"]
    for r in history:
        lines.append(f"{r.epoch},{r.train_loss:.6f},{r.train_acc:.6f},{r.val_loss:.6f},{r.val_acc:.6f}")
    write_text_atomic(path, "\n".join(lines) + "\n")
