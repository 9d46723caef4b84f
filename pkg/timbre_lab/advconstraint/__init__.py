from timbre_lab.advconstraint.constraint import (
    AttackOutcome,
    Perturbation,
    PerturbationConfig,
    adv_loss,
    make_adversarial_target,
    optimize_many,
    optimize_perturbation,
    pgd_step,
)
