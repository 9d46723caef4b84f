"""
Unit tests for classifier training and agreement metrics
"""
import numpy as np
import pytest

from timbre_lab.audiofeat import DatasetSpec, build_corpus, split_by_content
from timbre_lab.errors import InvalidArgumentError
from timbre_lab.speakernet import (
    TrainConfig,
    accuracy,
    agreement,
    classifier_hash,
    init_classifier,
    train,
)


def separable_pairs(n_per_class=20, seed=0):
    """Two speakers whose energy sits in disjoint halves of the mel bins"""
    rng = np.random.default_rng(seed)
    pairs = []
    for label in (0, 1):
        for _ in range(n_per_class):
            m = rng.normal(0.0, 0.3, size=(10, 8))
            m[:, label * 4:(label + 1) * 4] += 1.0
            pairs.append((m, label))
    return pairs


class TestTrain:
    """Test train"""

    def test_separable_toy_reaches_full_train_accuracy(self):
        result = train(separable_pairs(), TrainConfig(epochs=50, hidden=[8], val_fraction=0.0))
        assert result.train_accuracy == 1.0
        assert len(result.history) == 50

    def test_deterministic(self):
        cfg = TrainConfig(epochs=5, hidden=[8], seed=3)
        a = train(separable_pairs(), cfg).classifier
        b = train(separable_pairs(), cfg).classifier
        assert classifier_hash(a) == classifier_hash(b)

    def test_seed_changes_weights(self):
        a = train(separable_pairs(), TrainConfig(epochs=2, hidden=[8], seed=1)).classifier
        b = train(separable_pairs(), TrainConfig(epochs=2, hidden=[8], seed=2)).classifier
        assert classifier_hash(a) != classifier_hash(b)

    def test_full_batch_loss_never_increases(self):
        """Small-step full-batch descent is monotone"""
        pairs = separable_pairs(n_per_class=50, seed=4)
        cfg = TrainConfig(epochs=20, batch_size=100, learning_rate=1e-3, optimizer="sgd",
                          hidden=[8], val_fraction=0.0)
        losses = [h["loss"] for h in train(pairs, cfg).history]
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))
        assert losses[-1] < losses[0]

    def test_validation_split_reported(self):
        result = train(separable_pairs(), TrainConfig(epochs=20, hidden=[8], val_fraction=0.25))
        assert 0.0 <= result.val_accuracy <= 1.0

    def test_single_class_rejected(self):
        pairs = [(np.zeros((3, 8)), 0), (np.ones((3, 8)), 0)]
        with pytest.raises(InvalidArgumentError):
            train(pairs, TrainConfig(epochs=1))

    @pytest.mark.parametrize("field,value", [("epochs", 0), ("learning_rate", 0.0), ("val_fraction", 1.0)])
    def test_invalid_config(self, field, value):
        cfg = TrainConfig(**{field: value})
        with pytest.raises(InvalidArgumentError):
            train(separable_pairs(), cfg)


class TestMetrics:
    """Test agreement and accuracy"""

    def test_self_agreement(self):
        c = init_classifier(8, 2, [4], seed=1)
        mels = [m for m, _ in separable_pairs()]
        assert agreement(c, c, mels) == 1.0

    def test_agreement_is_symmetric(self):
        a = init_classifier(8, 2, [4], seed=1)
        b = init_classifier(8, 2, [4], seed=2)
        mels = [m for m, _ in separable_pairs()]
        assert agreement(a, b, mels) == agreement(b, a, mels)

    def test_empty_data(self):
        c = init_classifier(8, 2, [4])
        with pytest.raises(InvalidArgumentError):
            agreement(c, c, [])

    def test_speaker_count_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            agreement(init_classifier(8, 2, [4]), init_classifier(8, 3, [4]), [np.zeros((2, 8))])

    def test_accuracy_of_trained_model(self):
        result = train(separable_pairs(), TrainConfig(epochs=50, hidden=[8], val_fraction=0.0))
        assert accuracy(result.classifier, separable_pairs(seed=9)) >= 0.95


@pytest.mark.slow
class TestSyntheticCorpus:
    """Training-run oracle on the default 10-speaker corpus"""

    def test_held_out_accuracy(self):
        corpus = build_corpus(DatasetSpec())
        train_set, test_set = split_by_content(corpus, 5)
        result = train([(u.mel, u.speaker) for u in train_set], TrainConfig(seed=0))
        assert result.val_accuracy >= 0.95
        assert accuracy(result.classifier, [(u.mel, u.speaker) for u in test_set]) >= 0.95
