from timbre_lab.speakernet.checkpoint import (
    classifier_hash,
    decode_classifier,
    encode_classifier,
    load_classifier,
    save_classifier,
)
from timbre_lab.speakernet.model import (
    POOLING_MODES,
    SpeakerClassifier,
    argmax_label,
    feature_matrix,
    features,
    fit_standardisation,
    forward,
    grad_input,
    init_classifier,
    logits_of,
    mlp_backward,
    mlp_forward,
    pool,
    pool_backward,
    pooled_dim,
    predict,
    predict_batch,
)
from timbre_lab.speakernet.train import TrainConfig, TrainResult, accuracy, agreement, train
