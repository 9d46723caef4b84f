"""
Pseudo-Siamese distillation losses.

p1  = substitute(x_0)          original sample
p1' = substitute(x_1)          noise-transformed sample
p2  = oracle(x_0)              black-box posterior, a constant

    intrinsic  = KL(p1 || p1')
    auxiliary  = KL(p1' || p2)
    structural = KL(p1 || p2) + auxiliary
    total      = intrinsic + structural
"""
import numpy as np

from timbre_lab.errors import InvalidArgumentError
from timbre_lab.numkernel import kl_divergence, kl_divergence_grads

LOSS_VARIANTS = ("total", "str_only", "str_minus_aux")


def intrinsic_loss(p1, p1p):
    return kl_divergence(p1, p1p)


def structural_loss(p1, p1p, p2):
    """
    Returns:
        tuple: (l_str, l_aux)
    """
    l_aux = kl_divergence(p1p, p2)
    return kl_divergence(p1, p2) + l_aux, l_aux


def total_loss(p1, p1p, p2):
    l_str, _ = structural_loss(p1, p1p, p2)
    return intrinsic_loss(p1, p1p) + l_str


def distill_loss(variant, p1, p1p, p2):
    """
    Objective selected by ``variant``:

    - total:          intrinsic + structural
    - str_only:       structural (no intrinsic term)
    - str_minus_aux:  KL(p1 || p2) alone
    """
    if variant == "total":
        return total_loss(p1, p1p, p2)
    if variant == "str_only":
        return structural_loss(p1, p1p, p2)[0]
    if variant == "str_minus_aux":
        return kl_divergence(p1, p2)
    raise InvalidArgumentError(f"Unsupported loss variant: {variant} (use one of {LOSS_VARIANTS})")


def distill_loss_grads(variant, p1, p1p, p2, stop_grad_transformed=False):
    """
    Row-wise loss values and gradients w.r.t. both substitute posteriors.

    Args:
        variant (str): One of LOSS_VARIANTS
        p1, p1p, p2 (np.ndarray): (batch, n_speakers) posteriors
        stop_grad_transformed (bool): Treat p1' as a constant

    Returns:
        tuple: (loss per row, d/dp1, d/dp1')
    """
    loss = distill_loss(variant, p1, p1p, p2)
    da_12, _ = kl_divergence_grads(p1, p2)
    if variant == "total":
        da_ins, db_ins = kl_divergence_grads(p1, p1p)
        da_aux, _ = kl_divergence_grads(p1p, p2)
        dp1 = da_ins + da_12
        dp1p = db_ins + da_aux
    elif variant == "str_only":
        da_aux, _ = kl_divergence_grads(p1p, p2)
        dp1 = da_12
        dp1p = da_aux
    else:
        dp1 = da_12
        dp1p = np.zeros_like(np.asarray(p1p, dtype=np.float64))
    if stop_grad_transformed:
        dp1p = np.zeros_like(dp1p)
    return loss, dp1, dp1p
