"""Plain and adversarial minibatch SGD with a deterministic RNG contract.

No momentum, no weight decay, no schedules: a batch gradient is the
arithmetic mean of per-sample gradients, accumulated in a fixed order, and
the shuffle stream depends only on the config seed.  Adversarial training
regenerates perturbations for every batch with the attack engine before
the gradient step, so a zero-step adversary reproduces vanilla training
bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attack import AttackConfig, HeadBatch, batch_attack
from .data import Dataset
from .network import ReluNetwork, batch_backward_weights, batch_forward


class TrainError(RuntimeError):
    """Training could not proceed (bad config, empty data, diverging loss)."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    epochs: int
    batch_size: int
    seed: int = 0
    adversary: AttackConfig | None = None

    def __post_init__(self):
        if not self.learning_rate >= 0.0:
            raise TrainError(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 0 or self.batch_size < 1:
            raise TrainError(f"need epochs >= 0 and batch_size >= 1, got {self.epochs}, {self.batch_size}")


@dataclass
class TrainHistory:
    mean_loss: np.ndarray
    clean_accuracy: np.ndarray
    robust_accuracy: np.ndarray | None


def sigmoid_labels(labels: np.ndarray) -> np.ndarray:
    """Class index -> {-1, +1} by parity (even classes map to +1)."""
    return np.where(np.asarray(labels) % 2 == 0, 1.0, -1.0)


def head_batch_for(dataset_labels: np.ndarray, net: ReluNetwork) -> HeadBatch:
    """Training heads for a label vector: sigmoid when the network has one
    output, softmax cross-entropy otherwise."""
    labels = np.asarray(dataset_labels)
    if net.output_dim == 1:
        return HeadBatch("sigmoid", 1, labels=sigmoid_labels(labels))
    if labels.size and labels.max() >= net.output_dim:
        raise TrainError(f"label {labels.max()} out of range for {net.output_dim} outputs")
    return HeadBatch("softmax", net.output_dim, labels=labels.astype(np.intp))


def _correct(heads: HeadBatch, z: np.ndarray, labels: np.ndarray) -> np.ndarray:
    preds = heads.predictions(z)
    if heads.kind == "sigmoid":
        return preds == (sigmoid_labels(labels) > 0).astype(np.intp)
    return preds == labels


def sgd_train(net: ReluNetwork, dataset: Dataset, cfg: TrainConfig) -> tuple[ReluNetwork, TrainHistory]:
    """Minibatch SGD; returns a trained copy and the per-epoch history.

    With ``cfg.adversary`` set, every batch is replaced by freshly attacked
    inputs before the gradient step (labels unchanged), and the recorded
    robust accuracy is the post-attack batch accuracy at step time.
    """
    if len(dataset) == 0:
        raise TrainError("empty dataset")
    if dataset.dims != net.input_dim:
        raise TrainError(f"dataset dims {dataset.dims} != network input {net.input_dim}")
    net = net.copy()
    rng = np.random.default_rng(cfg.seed)
    n = len(dataset)
    adversarial = cfg.adversary is not None

    losses = np.zeros(cfg.epochs)
    clean_acc = np.zeros(cfg.epochs)
    robust_acc = np.zeros(cfg.epochs) if adversarial else None
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        loss_sum = 0.0
        clean_hits = 0
        robust_hits = 0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            xs = dataset.inputs[idx]
            labels = dataset.labels[idx]
            heads = head_batch_for(labels, net)
            if adversarial:
                _, _, _, z_clean = batch_forward(net, xs)
                clean_hits += int(_correct(heads, z_clean, labels).sum())
                deltas = batch_attack(net, heads, xs, cfg.adversary, with_stats=False).deltas
                xs = xs + deltas
            acts_in, _, masks, z = batch_forward(net, xs)
            loss_vec, gz = heads.loss_grad(z)
            if not np.all(np.isfinite(loss_vec)):
                bad = int(np.argmax(~np.isfinite(loss_vec)))
                raise TrainError(f"non-finite loss at epoch {epoch}, batch sample {bad}")
            loss_sum += float(loss_vec.sum())
            if adversarial:
                robust_hits += int(_correct(heads, z, labels).sum())
            else:
                clean_hits += int(_correct(heads, z, labels).sum())
            grads = batch_backward_weights(net, acts_in, masks, gz)
            scale = cfg.learning_rate / idx.size
            for j, (dw, db) in enumerate(grads):
                net.weights[j] -= scale * dw
                net.biases[j] -= scale * db
        losses[epoch] = loss_sum / n
        clean_acc[epoch] = clean_hits / n
        if adversarial:
            robust_acc[epoch] = robust_hits / n
    return net, TrainHistory(mean_loss=losses, clean_accuracy=clean_acc, robust_accuracy=robust_acc)


def adversarial_train(net: ReluNetwork, dataset: Dataset, cfg: TrainConfig) -> tuple[ReluNetwork, TrainHistory]:
    """Min-max training: maximize the loss per batch with the configured
    attack, then take the usual SGD step on the perturbed batch."""
    if cfg.adversary is None:
        raise TrainError("adversarial_train requires cfg.adversary")
    return sgd_train(net, dataset, cfg)


def evaluate(
    net: ReluNetwork, dataset: Dataset, adversary: AttackConfig | None = None, chunk: int = 2048
) -> tuple[float, float | None]:
    """(clean accuracy, robust accuracy after attacking each sample).

    Robust accuracy is None without an adversary; a zero-step adversary
    reproduces the clean number.
    """
    if len(dataset) == 0:
        raise TrainError("empty dataset")
    clean_hits = 0
    robust_hits = 0
    for start in range(0, len(dataset), chunk):
        xs = dataset.inputs[start : start + chunk]
        labels = dataset.labels[start : start + chunk]
        heads = head_batch_for(labels, net)
        _, _, _, z = batch_forward(net, xs)
        clean_hits += int(_correct(heads, z, labels).sum())
        if adversary is not None:
            deltas = batch_attack(net, heads, xs, adversary, with_stats=False).deltas
            _, _, _, z_adv = batch_forward(net, xs + deltas)
            robust_hits += int(_correct(heads, z_adv, labels).sum())
    clean = clean_hits / len(dataset)
    robust = robust_hits / len(dataset) if adversary is not None else None
    return clean, robust
