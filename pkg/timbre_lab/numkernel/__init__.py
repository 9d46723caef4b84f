from timbre_lab.numkernel.kernel import (
    PROB_FLOOR,
    as_matrix,
    check_prob_vector,
    clip_linf,
    cross_entropy,
    cross_entropy_grad,
    derive_seed,
    finite_difference_grad,
    kl_divergence,
    kl_divergence_grads,
    l1_loss,
    l1_loss_grad,
    make_rng,
    relative_error,
    sign,
    softmax,
    softmax_backward,
    softmax_rows,
    tanh,
    tanh_backward,
)
from timbre_lab.numkernel.optim import SGD, Adam, make_optimizer
