"""
Substitute Distillation

Trains a substitute classifier to mimic a query-only oracle. Each sample x_0
is paired with a fresh noise-transformed copy x_1 every epoch; both pass
through the same substitute (shared weights), and the chosen loss variant
couples p1, p1' and the oracle posterior p2. Ground-truth labels are never
used.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from timbre_lab.audiofeat import add_gaussian_noise
from timbre_lab.errors import BudgetExhaustedError, InvalidArgumentError
from timbre_lab.logs import log_event
from timbre_lab.numkernel import (
    as_matrix,
    derive_seed,
    kl_divergence,
    make_optimizer,
    make_rng,
    softmax_backward,
    softmax_rows,
)
from timbre_lab.speakernet import fit_standardisation, init_classifier, mlp_backward, mlp_forward, pool
from timbre_lab.substitute.losses import LOSS_VARIANTS, distill_loss_grads

# RNG stream ids
INIT_STREAM = 31
SHUFFLE_STREAM = 32
NOISE_STREAM = 33


@dataclass
class DistillConfig:
    """
    Distillation settings. ``sigma`` is in dB; the default is 5% of the
    80 dB mel dynamic range.
    """
    sigma: float = 4.0
    epochs: int = 40
    batch_size: int = 32
    learning_rate: float = 0.01
    seed: int = 0
    loss_variant: str = "total"
    hidden: list = field(default_factory=lambda: [64])
    pooling: str = "mean_std"
    optimizer: str = "adam"
    stop_grad_transformed: bool = False
    cache_queries: bool = True
    query_budget: Optional[int] = None

    def validate(self):
        if self.sigma < 0:
            raise InvalidArgumentError(f"sigma must be >= 0, got {self.sigma}")
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidArgumentError(f"epochs and batch_size must be positive, got {self.epochs}, {self.batch_size}")
        if self.learning_rate <= 0:
            raise InvalidArgumentError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.loss_variant not in LOSS_VARIANTS:
            raise InvalidArgumentError(f"Unsupported loss variant: {self.loss_variant} (use one of {LOSS_VARIANTS})")
        if self.query_budget is not None and self.query_budget < 0:
            raise InvalidArgumentError(f"query_budget must be >= 0, got {self.query_budget}")


@dataclass
class DistillState:
    """Everything needed to continue an interrupted distillation run"""
    substitute: object
    optimizer_state: dict
    epoch: int
    batch_start: int
    cache: dict
    pending: dict
    history: list
    n_samples: int
    epoch_totals: dict = field(default_factory=dict)
    query_count: int = 0


class DistillationInterrupted(BudgetExhaustedError):
    """The oracle budget ran out mid-run; ``state`` resumes it."""

    def __init__(self, message, state):
        super().__init__(message)
        self.state = state


@dataclass
class DistillResult:
    substitute: object
    history: list
    query_count: int


def transformed_sample(values, sigma, seed, epoch, index):
    """x_1 for sample ``index`` in ``epoch``; the noise seed depends on both."""
    return add_gaussian_noise(values, sigma, derive_seed(seed, NOISE_STREAM, epoch, index))


def _posteriors(oracle, mels, batch, state, cache_queries):
    """Oracle posteriors for a batch, reusing cached and already-paid answers."""
    rows = []
    for index in batch:
        index = int(index)
        if cache_queries and index in state.cache:
            rows.append(state.cache[index])
            continue
        if index in state.pending:
            rows.append(state.pending[index])
            continue
        p2 = np.asarray(oracle.query(mels[index]), dtype=np.float64)
        state.pending[index] = p2
        if cache_queries:
            state.cache[index] = p2
        rows.append(p2)
    state.pending = {}
    return np.stack(rows)


def train_substitute(oracle, mels, cfg, monitor=None, resume=None):
    """
    Distil a substitute classifier from a black-box oracle.

    Args:
        oracle: Anything with ``query(mel)``, ``n_speakers`` and
            ``query_count`` (BlackBoxOracle or RemoteOracle)
        mels (list): Unlabelled distillation mels
        cfg (DistillConfig): Loss variant, noise scale and optimiser settings
        monitor: Optional callable(substitute) -> float, logged per epoch as
            held-out agreement
        resume (DistillState): State carried by a DistillationInterrupted

    Returns:
        DistillResult: Substitute (float32-rounded), per-epoch records and the
            oracle's query count

    Raises:
        DistillationInterrupted: If the oracle budget runs out; the attached
            state continues the run bit-exactly once budget is available
    """
    cfg.validate()
    if len(mels) == 0:
        raise InvalidArgumentError("distillation needs at least one mel")
    values = [as_matrix(m, "mel") for m in mels]
    n = len(values)
    x0 = np.stack([pool(v, cfg.pooling) for v in values])

    if resume is None:
        mean, std = fit_standardisation(x0)
        substitute = init_classifier(
            values[0].shape[1], oracle.n_speakers, cfg.hidden, cfg.pooling,
            seed=derive_seed(cfg.seed, INIT_STREAM), feature_mean=mean, feature_std=std,
        )
        state = DistillState(substitute, {}, 0, 0, {}, {}, [], n)
        optimizer = make_optimizer(cfg.optimizer, substitute.parameters(), cfg.learning_rate)
    else:
        if resume.n_samples != n:
            raise InvalidArgumentError(f"resume state was built for {resume.n_samples} samples, got {n}")
        if resume.optimizer_state.get("name") != cfg.optimizer:
            raise InvalidArgumentError(
                f"resume state was built with optimizer {resume.optimizer_state.get('name')}, got {cfg.optimizer}"
            )
        state = resume
        substitute = state.substitute.copy()
        optimizer = make_optimizer(cfg.optimizer, substitute.parameters(), cfg.learning_rate)
        optimizer.load_state(state.optimizer_state)
    x0 = (x0 - substitute.feature_mean) / substitute.feature_std

    first_epoch, first_start = state.epoch, state.batch_start
    for epoch in range(first_epoch, cfg.epochs):
        order = make_rng(cfg.seed, SHUFFLE_STREAM, epoch).permutation(n)
        totals = {"loss": 0.0, "intrinsic": 0.0, "structural": 0.0, "auxiliary": 0.0}
        if epoch == first_epoch and state.epoch_totals:
            totals.update(state.epoch_totals)
        for start in range(first_start if epoch == first_epoch else 0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            try:
                p2 = _posteriors(oracle, values, batch, state, cfg.cache_queries)
            except BudgetExhaustedError as e:
                state.substitute = substitute.copy()
                state.optimizer_state = optimizer.state()
                state.epoch, state.batch_start = epoch, start
                state.epoch_totals = dict(totals)
                state.query_count = oracle.query_count
                log_event("WARNING", "Distillation interrupted", epoch=epoch + 1, batchStart=start,
                          queryCount=oracle.query_count)
                raise DistillationInterrupted(str(e), state) from e

            x1 = np.stack([
                (pool(transformed_sample(values[i], cfg.sigma, cfg.seed, epoch, int(i)), cfg.pooling)
                 - substitute.feature_mean) / substitute.feature_std
                for i in batch
            ])
            logits0, acts0 = mlp_forward(substitute.weights, substitute.biases, x0[batch])
            logits1, acts1 = mlp_forward(substitute.weights, substitute.biases, x1)
            p1, p1p = softmax_rows(logits0), softmax_rows(logits1)
            loss, dp1, dp1p = distill_loss_grads(cfg.loss_variant, p1, p1p, p2, cfg.stop_grad_transformed)

            gw0, gb0, _ = mlp_backward(substitute.weights, acts0, softmax_backward(p1, dp1) / len(batch))
            gw1, gb1, _ = mlp_backward(substitute.weights, acts1, softmax_backward(p1p, dp1p) / len(batch))
            optimizer.step([a + b for a, b in zip(gw0 + gb0, gw1 + gb1)])

            aux = kl_divergence(p1p, p2)
            totals["loss"] += float(np.sum(loss))
            totals["intrinsic"] += float(np.sum(kl_divergence(p1, p1p)))
            totals["structural"] += float(np.sum(kl_divergence(p1, p2) + aux))
            totals["auxiliary"] += float(np.sum(aux))

        record = {"epoch": epoch + 1, "lossVariant": cfg.loss_variant}
        record.update({k: v / n for k, v in totals.items()})
        record["queryCount"] = oracle.query_count
        if monitor is not None:
            record["heldOutAgreement"] = float(monitor(substitute))
        state.history.append(record)
        state.epoch_totals = {}
        log_event("INFO", "Distillation epoch", **record)

    substitute.quantize()
    return DistillResult(substitute=substitute, history=state.history, query_count=oracle.query_count)
