from timbre_lab.substitute.distill import (
    DistillationInterrupted,
    DistillConfig,
    DistillResult,
    DistillState,
    train_substitute,
    transformed_sample,
)
from timbre_lab.substitute.losses import (
    LOSS_VARIANTS,
    distill_loss,
    distill_loss_grads,
    intrinsic_loss,
    structural_loss,
    total_loss,
)
from timbre_lab.substitute.oracle import BlackBoxOracle
from timbre_lab.substitute.service import RemoteOracle, create_app, decode_posterior, encode_posterior
from timbre_lab.substitute.partial import (
    decode_distill_state,
    encode_distill_state,
    load_distill_state,
    save_distill_state,
)
