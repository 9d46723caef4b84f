"""
Adversarial Constraint Engine

Targeted l-infinity PGD on mel spectrograms:

    delta <- clip_eps(delta - lr * sign(grad_delta CE(f(M + delta), y')))

with an outer schedule that shrinks eps after every success, plus the
switching reconstruction / adversarial loss used by joint generator training.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from timbre_lab.audiofeat import MelSpectrogram
from timbre_lab.errors import InvalidArgumentError
from timbre_lab.numkernel import as_matrix, clip_linf, cross_entropy, l1_loss, sign
from timbre_lab.speakernet import forward, grad_input, predict


@dataclass
class Perturbation:
    """delta with its l-infinity budget eps and step size lr"""
    delta: np.ndarray
    eps: float
    lr: float

    def __post_init__(self):
        self.delta = np.asarray(self.delta, dtype=np.float64)
        if self.eps < 0:
            raise InvalidArgumentError(f"eps must be >= 0, got {self.eps}")
        if self.lr <= 0:
            raise InvalidArgumentError(f"lr must be positive, got {self.lr}")
        if self.delta.size and np.max(np.abs(self.delta)) > self.eps:
            raise InvalidArgumentError(
                f"delta exceeds its budget: ||delta||inf = {np.max(np.abs(self.delta))} > eps = {self.eps}"
            )

    @classmethod
    def zeros(cls, shape, eps, lr):
        return cls(delta=np.zeros(shape), eps=eps, lr=lr)


@dataclass
class PerturbationConfig:
    """
    PGD settings. Defaults follow the reference schedule: eps starts at 0.8,
    lr 8e-4, at most 1000 updates per budget level.
    """
    eps_start: float = 0.8
    lr: float = 8e-4
    max_iters: int = 1000
    eps_decay: float = 0.9
    eps_min: float = 0.05
    early_stop: bool = True
    tighten: bool = True

    def validate(self):
        if self.eps_start < 0:
            raise InvalidArgumentError(f"eps_start must be >= 0, got {self.eps_start}")
        if self.eps_min <= 0:
            raise InvalidArgumentError(f"eps_min must be positive, got {self.eps_min}")
        if not 0.0 < self.eps_decay < 1.0:
            raise InvalidArgumentError(f"eps_decay must be in (0, 1), got {self.eps_decay}")
        if self.max_iters < 1:
            raise InvalidArgumentError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.lr <= 0:
            raise InvalidArgumentError(f"lr must be positive, got {self.lr}")


@dataclass
class AttackOutcome:
    """
    Result of ``optimize_perturbation``. On success ``final_delta`` and
    ``final_eps`` describe the tightest budget level that still succeeded.
    """
    success: bool
    iterations_used: int
    final_delta: np.ndarray
    final_eps: float
    final_loss: float

    def to_record(self, sample_id, target):
        return {
            "sampleId": sample_id,
            "target": int(target),
            "success": bool(self.success),
            "iterations": int(self.iterations_used),
            "finalEps": float(self.final_eps),
            "finalLoss": float(self.final_loss),
        }


def pgd_step(p, grad):
    """
    One clipped sign-gradient step.

    Args:
        p (Perturbation): Current state
        grad: Gradient of the attack loss w.r.t. delta

    Returns:
        Perturbation: New state with the same eps and lr

    Raises:
        InvalidArgumentError: If grad and delta shapes differ
    """
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != p.delta.shape:
        raise InvalidArgumentError(f"gradient shape {grad.shape} does not match delta {p.delta.shape}")
    return Perturbation(delta=clip_linf(p.delta - p.lr * sign(grad), p.eps), eps=p.eps, lr=p.lr)


def _check_label(f, target):
    if isinstance(target, (bool, np.bool_)) or not isinstance(target, (int, np.integer)):
        raise InvalidArgumentError(f"target must be an integer label, got {target!r}")
    if not 0 <= int(target) < f.n_speakers:
        raise InvalidArgumentError(f"target {target} out of range for {f.n_speakers} speakers")


def _attack_at_budget(f, values, target, p, cfg):
    """PGD at a fixed eps. Returns (success, state, iterations)."""
    if predict(f, values + p.delta) == target:
        return True, p, 0
    for iteration in range(1, cfg.max_iters + 1):
        step = pgd_step(p, grad_input(f, values + p.delta, target))
        if np.array_equal(step.delta, p.delta):
            # clipped sign step is a fixed point; further iterations cannot move
            return predict(f, values + p.delta) == target, p, iteration
        p = step
        if cfg.early_stop and predict(f, values + p.delta) == target:
            return True, p, iteration
    return predict(f, values + p.delta) == target, p, cfg.max_iters


def optimize_perturbation(f, m, target, cfg=None):
    """
    Find a small delta with predict(f, m + delta) == target.

    PGD runs at eps_start for at most max_iters steps, taking the gradient at
    m + delta every step. After a success (and when ``cfg.tighten``), eps is
    multiplied by eps_decay and PGD restarts from the clipped delta; the
    schedule ends at the first failure or once eps would drop below eps_min.

    Args:
        f (SpeakerClassifier): Frozen target classifier
        m: Mel matrix or MelSpectrogram
        target (int): Desired label y'
        cfg (PerturbationConfig): Schedule; defaults apply when omitted

    Returns:
        AttackOutcome: The last successful state, or the final failed one.
            ``iterations_used`` counts steps over every budget level.

    Raises:
        InvalidArgumentError: If target is not a valid label
    """
    cfg = cfg or PerturbationConfig()
    cfg.validate()
    _check_label(f, target)
    values = as_matrix(m, "mel")

    if predict(f, values) == target:
        return AttackOutcome(
            success=True,
            iterations_used=0,
            final_delta=np.zeros_like(values),
            final_eps=0.0,
            final_loss=cross_entropy(forward(f, values), target),
        )

    p = Perturbation.zeros(values.shape, cfg.eps_start, cfg.lr)
    best = None
    total = 0
    while True:
        success, p, used = _attack_at_budget(f, values, target, p, cfg)
        total += used
        if not success:
            break
        best = Perturbation(delta=p.delta.copy(), eps=p.eps, lr=p.lr)
        next_eps = p.eps * cfg.eps_decay
        if not cfg.tighten or next_eps < cfg.eps_min:
            break
        p = Perturbation(delta=clip_linf(p.delta, next_eps), eps=next_eps, lr=p.lr)

    final = best or p
    return AttackOutcome(
        success=best is not None,
        iterations_used=total,
        final_delta=final.delta,
        final_eps=float(final.eps),
        final_loss=cross_entropy(forward(f, values + final.delta), target),
    )


def optimize_many(f, mels, targets, cfg=None, workers=1):
    """
    Run ``optimize_perturbation`` over many (mel, target) pairs.

    Results keep input order whatever ``workers`` is.
    """
    if len(mels) != len(targets):
        raise InvalidArgumentError(f"{len(mels)} mels but {len(targets)} targets")
    jobs = list(zip(mels, targets))
    if workers <= 1:
        return [optimize_perturbation(f, m, t, cfg) for m, t in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: optimize_perturbation(f, job[0], job[1], cfg), jobs))


def make_adversarial_target(m_hat, p):
    """
    M_adv = M_hat + delta.

    Returns:
        Same type as ``m_hat``

    Raises:
        InvalidArgumentError: If shapes differ
    """
    values = as_matrix(m_hat, "m_hat")
    if values.shape != p.delta.shape:
        raise InvalidArgumentError(f"delta shape {p.delta.shape} does not match mel {values.shape}")
    out = values + p.delta
    if isinstance(m_hat, MelSpectrogram):
        return MelSpectrogram(values=out, seed=m_hat.seed, meta=dict(m_hat.meta))
    return out


def _same_shapes(*mels):
    arrays = [as_matrix(m, "mel") for m in mels]
    if len({a.shape for a in arrays}) != 1:
        raise InvalidArgumentError(f"shape mismatch: {[a.shape for a in arrays]}")
    return arrays


def adv_loss(m_gt, m_hat, m_adv, attack_succeeded):
    """
    Switching loss for joint training.

    Returns l1(M_gt, M_hat) when the generated mel already fools the
    classifier, else l1(M_adv, M_hat).
    """
    gt, hat, adv = _same_shapes(m_gt, m_hat, m_adv)
    return l1_loss(gt, hat) if attack_succeeded else l1_loss(adv, hat)
