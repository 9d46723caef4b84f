"""
Speaker Classifier Training and Metrics

Minibatch training on cross-entropy over precomputed pooled features, plus
the agreement and accuracy metrics used by every evaluation table.
"""
from dataclasses import dataclass, field

import numpy as np

from timbre_lab.errors import InvalidArgumentError
from timbre_lab.logs import log_event
from timbre_lab.numkernel import PROB_FLOOR, as_matrix, derive_seed, make_optimizer, make_rng, softmax_rows
from timbre_lab.speakernet.model import (
    fit_standardisation,
    init_classifier,
    mlp_backward,
    mlp_forward,
    pool,
    predict_batch,
)

# RNG stream ids
INIT_STREAM = 1
SPLIT_STREAM = 2
SHUFFLE_STREAM = 3


@dataclass
class TrainConfig:
    """Classifier architecture and optimisation settings"""
    epochs: int = 60
    batch_size: int = 32
    learning_rate: float = 0.01
    seed: int = 0
    hidden: list = field(default_factory=lambda: [64])
    optimizer: str = "adam"
    val_fraction: float = 0.2
    pooling: str = "mean_std"

    def validate(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidArgumentError(f"epochs and batch_size must be positive, got {self.epochs}, {self.batch_size}")
        if self.learning_rate <= 0:
            raise InvalidArgumentError(f"learning_rate must be positive, got {self.learning_rate}")
        if any(h < 1 for h in self.hidden):
            raise InvalidArgumentError(f"hidden sizes must be positive, got {self.hidden}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise InvalidArgumentError(f"val_fraction must be in [0, 1), got {self.val_fraction}")


@dataclass
class TrainResult:
    classifier: object
    train_accuracy: float
    val_accuracy: float
    history: list


def _unzip(data):
    if len(data) == 0:
        raise InvalidArgumentError("training data is empty")
    mels = [as_matrix(m, "mel") for m, _ in data]
    labels = np.array([int(label) for _, label in data], dtype=np.int64)
    return mels, labels


def stratified_split(labels, val_fraction, seed):
    """
    Per-label random split that keeps at least one sample of every label in
    the training part.

    Returns:
        tuple: (train indices, validation indices), both sorted
    """
    rng = make_rng(seed, SPLIT_STREAM)
    train_idx, val_idx = [], []
    for label in np.unique(labels):
        members = np.flatnonzero(labels == label)
        members = members[rng.permutation(len(members))]
        n_val = min(int(round(val_fraction * len(members))), len(members) - 1)
        val_idx.extend(members[:n_val])
        train_idx.extend(members[n_val:])
    return np.sort(np.array(train_idx, dtype=np.int64)), np.sort(np.array(val_idx, dtype=np.int64))


def _loss_and_grads(c, x, y):
    logits, activations = mlp_forward(c.weights, c.biases, x)
    p = softmax_rows(logits)
    rows = np.arange(len(y))
    loss = float(np.mean(-np.log(p[rows, y] + PROB_FLOOR)))
    # d mean CE / d logits with the floored log
    picked = p[rows, y]
    dlogits = p * (picked / (picked + PROB_FLOOR))[:, None]
    dlogits[rows, y] -= picked / (picked + PROB_FLOOR)
    dlogits /= len(y)
    grads_w, grads_b, _ = mlp_backward(c.weights, activations, dlogits)
    return loss, grads_w + grads_b


def _accuracy_on(c, x, y):
    if len(y) == 0:
        return float("nan")
    logits, _ = mlp_forward(c.weights, c.biases, x)
    return float(np.mean(np.argmax(logits, axis=1) == y))


def train(data, cfg, n_speakers=None, n_mels=None):
    """
    Train a speaker classifier by minibatch gradient descent on cross-entropy.

    Args:
        data (list[tuple]): (mel, label) pairs
        cfg (TrainConfig): Architecture and optimiser settings
        n_speakers (int): Output classes; defaults to max label + 1
        n_mels (int): Expected mel bins; defaults to the data's

    Returns:
        TrainResult: Classifier (float32-rounded parameters), final train and
            validation accuracy, per-epoch history

    Raises:
        InvalidArgumentError: If fewer than two distinct labels are present
    """
    cfg.validate()
    mels, labels = _unzip(data)
    if len(np.unique(labels)) < 2:
        raise InvalidArgumentError("training data must contain at least two distinct speakers")
    n_speakers = n_speakers or int(labels.max()) + 1
    n_mels = n_mels or mels[0].shape[1]
    if any(m.shape[1] != n_mels for m in mels):
        raise InvalidArgumentError(f"all mels must have {n_mels} bins")

    pooled = np.stack([pool(m, cfg.pooling) for m in mels])
    train_idx, val_idx = stratified_split(labels, cfg.val_fraction, cfg.seed)
    mean, std = fit_standardisation(pooled[train_idx])
    c = init_classifier(n_mels, n_speakers, cfg.hidden, cfg.pooling, seed=derive_seed(cfg.seed, INIT_STREAM),
                        feature_mean=mean, feature_std=std)
    x = (pooled - c.feature_mean) / c.feature_std
    x_train, y_train = x[train_idx], labels[train_idx]
    x_val, y_val = x[val_idx], labels[val_idx]

    params = c.parameters()
    optimizer = make_optimizer(cfg.optimizer, params, cfg.learning_rate)
    history = []
    for epoch in range(cfg.epochs):
        order = make_rng(cfg.seed, SHUFFLE_STREAM, epoch).permutation(len(train_idx))
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            _, grads = _loss_and_grads(c, x_train[batch], y_train[batch])
            optimizer.step(grads)
        loss, _ = _loss_and_grads(c, x_train, y_train)
        record = {
            "epoch": epoch + 1,
            "loss": loss,
            "trainAccuracy": _accuracy_on(c, x_train, y_train),
            "valAccuracy": _accuracy_on(c, x_val, y_val),
        }
        history.append(record)
        log_event("DEBUG", "Classifier epoch", **record)

    c.quantize()
    x = (pooled - c.feature_mean) / c.feature_std
    result = TrainResult(
        classifier=c,
        train_accuracy=_accuracy_on(c, x[train_idx], y_train),
        val_accuracy=_accuracy_on(c, x[val_idx], y_val),
        history=history,
    )
    log_event(
        "INFO",
        "Classifier trained",
        samples=len(labels),
        speakers=n_speakers,
        hidden=list(cfg.hidden),
        pooling=cfg.pooling,
        trainAccuracy=result.train_accuracy,
        valAccuracy=result.val_accuracy,
    )
    return result


def accuracy(c, data):
    """
    Fraction of (mel, label) pairs the classifier labels correctly.

    Raises:
        InvalidArgumentError: If data is empty
    """
    mels, labels = _unzip(data)
    return float(np.mean(predict_batch(c, mels) == labels))


def agreement(a, b, mels):
    """
    Fraction of mels on which two classifiers predict the same label.

    Raises:
        InvalidArgumentError: If mels is empty or output sizes differ
    """
    if len(mels) == 0:
        raise InvalidArgumentError("agreement needs at least one mel")
    if a.n_speakers != b.n_speakers:
        raise InvalidArgumentError(f"speaker counts differ: {a.n_speakers} vs {b.n_speakers}")
    return float(np.mean(predict_batch(a, mels) == predict_batch(b, mels)))
