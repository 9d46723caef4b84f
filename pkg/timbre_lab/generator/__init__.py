from timbre_lab.generator.checkpoint import (
    decode_generator,
    encode_generator,
    generator_hash,
    load_generator,
    save_generator,
)
from timbre_lab.generator.model import (
    CondGenerator,
    ContentCode,
    backward_batch,
    forward_batch,
    generate,
    init_generator,
    make_content_code,
)
from timbre_lab.generator.train import (
    ADV,
    FALLBACK,
    RECON,
    GeneratorConfig,
    GenPair,
    GenTrainResult,
    generator_for_pairs,
    joint_train_adv,
    mean_reference_mel,
    pairs_from_corpus,
    reconstruction_loss,
    train_recon,
)
