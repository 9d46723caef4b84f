"""
Generator Training

Reconstruction pre-training and joint training with the adversarial
constraint. Both run the same minibatch loop; they differ only in how the
per-sample L1 reference is chosen:

- recon:    reference = M_gt
- joint:    reference = M_gt if f(M_hat) already gives the target speaker,
            else M_adv = M_hat + delta from an inner PGD attack on f,
            else (attack failed) M_gt again
"""
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from timbre_lab.advconstraint import Perturbation, make_adversarial_target, optimize_many
from timbre_lab.errors import InvalidArgumentError
from timbre_lab.generator.model import backward_batch, forward_batch, init_generator, make_content_code
from timbre_lab.logs import log_event
from timbre_lab.numkernel import as_matrix, l1_loss, l1_loss_grad, make_optimizer, make_rng
from timbre_lab.speakernet import classifier_hash, predict

SHUFFLE_STREAM = 21

RECON = "recon"
ADV = "adv"
FALLBACK = "fallback"


@dataclass
class GeneratorConfig:
    """Generator architecture and optimisation settings"""
    content_dim: int = 16
    d_spk: int = 8
    hidden: int = 64
    epochs: int = 150
    joint_epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 3e-3
    optimizer: str = "adam"
    seed: int = 0
    init_output_bias: bool = True
    workers: int = 1

    def validate(self):
        if min(self.content_dim, self.d_spk, self.hidden, self.batch_size) < 1:
            raise InvalidArgumentError("generator widths and batch_size must be positive")
        if self.epochs < 1 or self.joint_epochs < 1:
            raise InvalidArgumentError(f"epochs must be positive, got {self.epochs}, {self.joint_epochs}")
        if self.learning_rate <= 0:
            raise InvalidArgumentError(f"learning_rate must be positive, got {self.learning_rate}")


@dataclass
class GenPair:
    """One training example: content code, conditioning speaker and ground-truth mel"""
    sample_id: str
    content: object
    speaker: int
    m_gt: np.ndarray

    def __post_init__(self):
        self.m_gt = as_matrix(self.m_gt, "m_gt")


@dataclass
class BranchDecision:
    reference: np.ndarray
    branch: str
    outcome: object = None


@dataclass
class GenTrainResult:
    generator: object
    history: list
    final_loss: float
    samples: list = field(default_factory=list)


def pairs_from_corpus(utterances, content_dim, seed):
    """
    Training pairs for a corpus; the content code of an utterance depends
    only on its content id.
    """
    codes = {}
    pairs = []
    for utt in utterances:
        if utt.content_id not in codes:
            codes[utt.content_id] = make_content_code(utt.content_id, content_dim, seed)
        pairs.append(GenPair(sample_id=utt.sample_id, content=codes[utt.content_id], speaker=utt.speaker, m_gt=utt.mel))
    return pairs


def mean_reference_mel(pairs):
    return np.mean([p.m_gt for p in pairs], axis=0)


def generator_for_pairs(pairs, n_speakers, cfg):
    """Fresh generator sized for ``pairs``, widths and seed from ``cfg``."""
    cfg.validate()
    if len(pairs) == 0:
        raise InvalidArgumentError("generator training needs at least one pair")
    frames, n_mels = pairs[0].m_gt.shape
    return init_generator(
        n_speakers, frames, n_mels,
        content_dim=cfg.content_dim, d_spk=cfg.d_spk, hidden=cfg.hidden, seed=cfg.seed,
        output_bias=mean_reference_mel(pairs) if cfg.init_output_bias else None,
    )


def reconstruction_loss(g, pairs):
    """Mean L1 between generated and ground-truth mels over ``pairs``."""
    out, _ = forward_batch(g, [p.content for p in pairs], [p.speaker for p in pairs])
    return float(np.mean([l1_loss(o, p.m_gt) for o, p in zip(out, pairs)]))


def _fit(g, pairs, cfg, epochs, choose, instrument=False, stage=RECON):
    """
    Shared minibatch loop. ``choose(batch, outputs)`` returns one
    BranchDecision per sample and must not draw random numbers.
    """
    cfg.validate()
    if len(pairs) == 0:
        raise InvalidArgumentError("generator training needs at least one pair")
    for pair in pairs:
        if pair.m_gt.shape != (g.frames, g.n_mels):
            raise InvalidArgumentError(
                f"{pair.sample_id}: mel shape {pair.m_gt.shape} does not match generator output {(g.frames, g.n_mels)}"
            )

    g = g.copy()
    optimizer = make_optimizer(cfg.optimizer, g.parameters(), cfg.learning_rate)
    history, samples = [], []
    for epoch in range(epochs):
        order = make_rng(cfg.seed, SHUFFLE_STREAM, epoch).permutation(len(pairs))
        branches = Counter()
        recon_total = 0.0
        loss_total = 0.0
        inner_iterations = 0
        for batch_no, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = [pairs[i] for i in order[start:start + cfg.batch_size]]
            out, cache = forward_batch(g, [p.content for p in batch], [p.speaker for p in batch])
            decisions = choose(batch, out)
            dout = np.empty_like(out)
            for i, (pair, decision) in enumerate(zip(batch, decisions)):
                loss = l1_loss(out[i], decision.reference)
                dout[i] = l1_loss_grad(out[i], decision.reference) / len(batch)
                recon_total += l1_loss(out[i], pair.m_gt)
                loss_total += loss
                branches[decision.branch] += 1
                if decision.outcome is not None:
                    inner_iterations += decision.outcome.iterations_used
                if instrument:
                    samples.append({
                        "epoch": epoch + 1,
                        "batch": batch_no,
                        "sampleId": pair.sample_id,
                        "target": pair.speaker,
                        "branch": decision.branch,
                        "flag": decision.branch == RECON,
                        "loss": loss,
                        "m_gt": pair.m_gt,
                        "m_hat": out[i].copy(),
                        "m_adv": decision.reference if decision.branch == ADV else (
                            out[i].copy() if decision.branch == RECON else pair.m_gt
                        ),
                    })
            optimizer.step(backward_batch(g, cache, dout))

        n = len(pairs)
        record = {"epoch": epoch + 1, "reconLoss": recon_total / n, "trainLoss": loss_total / n}
        if stage != RECON:
            record.update({
                "successRate": branches[RECON] / n,
                "advBranchRate": branches[ADV] / n,
                "fallbackRate": branches[FALLBACK] / n,
                "innerIterations": inner_iterations,
            })
        history.append(record)
        log_event("INFO", "Generator epoch", stage=stage, **record)

    g.quantize()
    return GenTrainResult(generator=g, history=history, final_loss=reconstruction_loss(g, pairs), samples=samples)


def train_recon(g, pairs, cfg, epochs=None, instrument=False):
    """
    Reconstruction training: minimise mean L1 to the ground-truth mels.

    Args:
        g (CondGenerator): Starting point (not modified)
        pairs (list[GenPair]): Training pairs
        cfg (GeneratorConfig): Optimisation settings
        epochs (int): Defaults to ``cfg.epochs``

    Returns:
        GenTrainResult: Trained copy, per-epoch records and final recon loss

    Raises:
        InvalidArgumentError: If pairs is empty
    """
    def choose(batch, out):
        return [BranchDecision(reference=pair.m_gt, branch=RECON) for pair in batch]

    return _fit(g, pairs, cfg, epochs or cfg.epochs, choose, instrument=instrument, stage=RECON)


def joint_train_adv(g, f, pairs, pcfg, cfg, epochs=None, instrument=False):
    """
    Joint training with the adversarial constraint against a frozen classifier.

    For every generated M_hat whose label under ``f`` is not its conditioning
    speaker, one full ``optimize_perturbation`` run builds M_adv and the step
    pulls M_hat towards it. When that inner attack fails the step falls back
    to the reconstruction target.

    Args:
        g (CondGenerator): Starting point, usually recon-pretrained (not modified)
        f (SpeakerClassifier): Frozen classifier being attacked
        pairs (list[GenPair]): Training pairs; the target label is each pair's speaker
        pcfg (PerturbationConfig): Inner attack schedule
        cfg (GeneratorConfig): Optimisation settings
        epochs (int): Defaults to ``cfg.joint_epochs``
        instrument (bool): Keep per-sample branch records in ``samples``

    Returns:
        GenTrainResult: Trained copy plus per-epoch attack statistics

    Raises:
        RuntimeError: If the classifier's parameters changed during training
    """
    frozen = classifier_hash(f)

    def choose(batch, out):
        decisions = [None] * len(batch)
        failing = []
        for i, pair in enumerate(batch):
            if predict(f, out[i]) == pair.speaker:
                decisions[i] = BranchDecision(reference=pair.m_gt, branch=RECON)
            else:
                failing.append(i)
        outcomes = optimize_many(
            f, [out[i] for i in failing], [batch[i].speaker for i in failing], pcfg, workers=cfg.workers
        )
        for i, outcome in zip(failing, outcomes):
            if outcome.success:
                delta = Perturbation(delta=outcome.final_delta, eps=outcome.final_eps, lr=pcfg.lr)
                decisions[i] = BranchDecision(
                    reference=make_adversarial_target(out[i], delta), branch=ADV, outcome=outcome
                )
            else:
                decisions[i] = BranchDecision(reference=batch[i].m_gt, branch=FALLBACK, outcome=outcome)
        return decisions

    result = _fit(g, pairs, cfg, epochs or cfg.joint_epochs, choose, instrument=instrument, stage="joint")
    if classifier_hash(f) != frozen:
        raise RuntimeError("classifier parameters changed during joint training")
    return result
