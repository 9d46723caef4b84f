"""
Unit tests for the oracle, the distillation losses and substitute training
"""
import functools
import inspect

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from timbre_lab.audiofeat import DatasetSpec, MelSpectrogram, build_corpus, encode_mel, split_by_content
from timbre_lab.errors import ArtifactFormatError, BudgetExhaustedError, InvalidArgumentError
from timbre_lab.numkernel import (
    finite_difference_grad,
    kl_divergence,
    relative_error,
    softmax_backward,
    softmax_rows,
)
from timbre_lab.speakernet import (
    TrainConfig,
    accuracy,
    agreement,
    classifier_hash,
    forward,
    init_classifier,
    mlp_backward,
    mlp_forward,
    train,
)
from timbre_lab.substitute import (
    LOSS_VARIANTS,
    BlackBoxOracle,
    DistillationInterrupted,
    DistillConfig,
    RemoteOracle,
    create_app,
    decode_distill_state,
    decode_posterior,
    distill,
    distill_loss,
    distill_loss_grads,
    encode_posterior,
    intrinsic_loss,
    load_distill_state,
    save_distill_state,
    structural_loss,
    total_loss,
    train_substitute,
    transformed_sample,
)

N_MELS, N_SPEAKERS = 4, 3


def backing_classifier(seed=1):
    return init_classifier(N_MELS, N_SPEAKERS, [5], seed=seed)


def toy_mels(n=10, seed=0):
    rng = np.random.default_rng(seed)
    return [rng.normal(0.0, 2.0, size=(6, N_MELS)) + rng.normal(0.0, 3.0, size=N_MELS) for _ in range(n)]


def toy_cfg(**kwargs):
    base = dict(sigma=1.0, epochs=3, batch_size=4, learning_rate=0.01, seed=2, hidden=[5])
    base.update(kwargs)
    return DistillConfig(**base)


def random_posteriors(rng, rows, cols):
    return softmax_rows(rng.normal(0.0, 2.0, size=(rows, cols)))


class TestLosses:
    """Test the pseudo-Siamese loss family"""

    def test_algebra_on_random_triples(self):
        rng = np.random.default_rng(0)
        p1, p1p, p2 = (random_posteriors(rng, 10_000, 5) for _ in range(3))
        l_str, l_aux = structural_loss(p1, p1p, p2)
        l_ins = intrinsic_loss(p1, p1p)
        l_total = total_loss(p1, p1p, p2)

        np.testing.assert_allclose(l_total, l_ins + l_str, atol=1e-12)
        np.testing.assert_allclose(l_str, kl_divergence(p1, p2) + l_aux, atol=1e-12)
        assert np.all(l_total >= -1e-9)
        assert np.all(l_total >= l_str - 1e-9)

    def test_identical_posteriors_cost_nothing(self):
        p = np.array([[0.2, 0.3, 0.5]])
        for variant in LOSS_VARIANTS:
            assert distill_loss(variant, p, p, p)[0] == pytest.approx(0.0, abs=1e-12)

    def test_closed_form_two_class_example(self):
        p1 = np.array([[0.5, 0.5]])
        p2 = np.array([[0.25, 0.75]])
        expected_kl = 0.5 * np.log(0.5 / 0.25) + 0.5 * np.log(0.5 / 0.75)
        assert total_loss(p1, p1, p2)[0] == pytest.approx(2 * expected_kl, rel=1e-9)
        assert distill_loss("str_minus_aux", p1, p1, p2)[0] == pytest.approx(expected_kl, rel=1e-9)

    def test_unknown_variant(self):
        p = np.array([[0.5, 0.5]])
        with pytest.raises(InvalidArgumentError):
            distill_loss("intrinsic_only", p, p, p)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(min_value=0, max_value=2**31 - 1))
    def test_gradients_match_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        p1, p1p, p2 = (random_posteriors(rng, 1, 4)[0] for _ in range(3))
        for variant in LOSS_VARIANTS:
            _, dp1, dp1p = distill_loss_grads(variant, p1, p1p, p2)
            num1 = finite_difference_grad(lambda x: float(distill_loss(variant, x, p1p, p2)), p1, step=1e-6)
            num1p = finite_difference_grad(lambda x: float(distill_loss(variant, p1, x, p2)), p1p, step=1e-6)
            assert relative_error(dp1, num1) < 1e-4
            assert relative_error(dp1p, num1p) < 1e-4

    def test_stop_grad_zeroes_transformed_branch(self):
        rng = np.random.default_rng(1)
        p1, p1p, p2 = (random_posteriors(rng, 3, 4) for _ in range(3))
        _, _, dp1p = distill_loss_grads("total", p1, p1p, p2, stop_grad_transformed=True)
        assert np.all(dp1p == 0.0)


def substitute_batch_grads(sub, x0, x1, p2, variant):
    """Parameter gradients exactly as the distillation step computes them"""
    logits0, acts0 = mlp_forward(sub.weights, sub.biases, x0)
    logits1, acts1 = mlp_forward(sub.weights, sub.biases, x1)
    p1, p1p = softmax_rows(logits0), softmax_rows(logits1)
    _, dp1, dp1p = distill_loss_grads(variant, p1, p1p, p2)
    gw0, gb0, _ = mlp_backward(sub.weights, acts0, softmax_backward(p1, dp1) / len(x0))
    gw1, gb1, _ = mlp_backward(sub.weights, acts1, softmax_backward(p1p, dp1p) / len(x0))
    return [a + b for a, b in zip(gw0 + gb0, gw1 + gb1)]


class TestParameterGradients:
    """Test substitute parameter gradients through both shared-weight branches"""

    @pytest.mark.parametrize("variant", LOSS_VARIANTS)
    @given(seed=st.integers(0, 2**16))
    @settings(max_examples=35, deadline=None)
    def test_matches_finite_differences(self, variant, seed):
        rng = np.random.default_rng(seed)
        sub = init_classifier(N_MELS, N_SPEAKERS, [5], seed=seed + 1)
        x0 = rng.normal(size=(4, sub.in_dim))
        x1 = x0 + rng.normal(0.0, 0.3, size=x0.shape)
        p2 = random_posteriors(rng, 4, N_SPEAKERS)

        analytic = substitute_batch_grads(sub, x0, x1, p2, variant)
        for index, param in enumerate(sub.parameters()):
            def loss(values, index=index):
                trial = sub.copy()
                trial.parameters()[index][...] = values
                p1 = softmax_rows(mlp_forward(trial.weights, trial.biases, x0)[0])
                p1p = softmax_rows(mlp_forward(trial.weights, trial.biases, x1)[0])
                return float(np.mean(distill_loss(variant, p1, p1p, p2)))

            numeric = finite_difference_grad(loss, param, step=1e-5)
            assert relative_error(analytic[index], numeric) < 1e-3


class TestBlackBoxOracle:
    """Test BlackBoxOracle"""

    def test_query_matches_backing_and_counts(self):
        f = backing_classifier()
        oracle = BlackBoxOracle(f)
        m = toy_mels(1)[0]
        np.testing.assert_array_equal(oracle.query(m), forward(f, m))
        oracle.query(m)
        assert oracle.query_count == 2

    def test_answers_are_copies(self):
        oracle = BlackBoxOracle(backing_classifier())
        m = toy_mels(1)[0]
        first = oracle.query(m)
        first[:] = 0.0
        assert oracle.query(m).sum() == pytest.approx(1.0)

    def test_zero_budget_refuses_first_query(self):
        oracle = BlackBoxOracle(backing_classifier(), query_budget=0)
        with pytest.raises(BudgetExhaustedError):
            oracle.query(toy_mels(1)[0])
        assert oracle.query_count == 0

    def test_budget_and_extension(self):
        oracle = BlackBoxOracle(backing_classifier(), query_budget=2)
        m = toy_mels(1)[0]
        oracle.query(m)
        oracle.query(m)
        assert oracle.remaining == 0
        with pytest.raises(BudgetExhaustedError):
            oracle.query(m)
        oracle.extend_budget(1)
        oracle.query(m)
        assert oracle.query_count == 3

    def test_negative_budget(self):
        with pytest.raises(InvalidArgumentError):
            BlackBoxOracle(backing_classifier(), query_budget=-1)


class QueryOnlyOracle:
    """Exposes nothing but the query surface"""

    def __init__(self, classifier):
        self._answer = lambda m: forward(classifier, m)
        self.n_speakers = classifier.n_speakers
        self.query_count = 0

    def query(self, m):
        self.query_count += 1
        return self._answer(m)


class TestTrainSubstitute:
    """Test train_substitute"""

    def test_query_accounting_without_cache(self):
        oracle = BlackBoxOracle(backing_classifier())
        result = train_substitute(oracle, toy_mels(), toy_cfg(cache_queries=False))
        assert result.query_count == 3 * 10
        assert [h["queryCount"] for h in result.history] == [10, 20, 30]

    def test_query_accounting_with_cache(self):
        oracle = BlackBoxOracle(backing_classifier())
        result = train_substitute(oracle, toy_mels(), toy_cfg())
        assert result.query_count == 10

    def test_zero_budget_interrupts_immediately(self):
        oracle = BlackBoxOracle(backing_classifier(), query_budget=0)
        with pytest.raises(DistillationInterrupted) as info:
            train_substitute(oracle, toy_mels(), toy_cfg())
        assert info.value.state.epoch == 0 and info.value.state.batch_start == 0
        assert isinstance(info.value, BudgetExhaustedError)

    def test_resume_matches_uninterrupted_run(self):
        mels, cfg = toy_mels(), toy_cfg(cache_queries=False)
        reference = train_substitute(BlackBoxOracle(backing_classifier()), mels, cfg)

        oracle = BlackBoxOracle(backing_classifier(), query_budget=13)
        with pytest.raises(DistillationInterrupted) as info:
            train_substitute(oracle, mels, cfg)
        oracle.extend_budget(100)
        resumed = train_substitute(oracle, mels, cfg, resume=info.value.state)

        assert classifier_hash(resumed.substitute) == classifier_hash(reference.substitute)
        assert resumed.history == reference.history
        assert resumed.query_count == reference.query_count == 30

    def test_resume_with_wrong_dataset(self):
        oracle = BlackBoxOracle(backing_classifier(), query_budget=3)
        with pytest.raises(DistillationInterrupted) as info:
            train_substitute(oracle, toy_mels(), toy_cfg())
        with pytest.raises(InvalidArgumentError):
            train_substitute(oracle, toy_mels(5), toy_cfg(), resume=info.value.state)

    def test_resume_with_other_optimizer(self):
        oracle = BlackBoxOracle(backing_classifier(), query_budget=3)
        with pytest.raises(DistillationInterrupted) as info:
            train_substitute(oracle, toy_mels(), toy_cfg())
        oracle.extend_budget(100)
        with pytest.raises(InvalidArgumentError):
            train_substitute(oracle, toy_mels(), toy_cfg(optimizer="sgd"), resume=info.value.state)

    def test_deterministic(self):
        a = train_substitute(BlackBoxOracle(backing_classifier()), toy_mels(), toy_cfg()).substitute
        b = train_substitute(BlackBoxOracle(backing_classifier()), toy_mels(), toy_cfg()).substitute
        assert classifier_hash(a) == classifier_hash(b)

    def test_zero_sigma_total_is_twice_structural_kl(self):
        result = train_substitute(BlackBoxOracle(backing_classifier()), toy_mels(), toy_cfg(sigma=0.0))
        for record in result.history:
            assert record["intrinsic"] == pytest.approx(0.0, abs=1e-12)
            assert record["loss"] == pytest.approx(2 * record["auxiliary"], rel=1e-9)
            assert record["structural"] == pytest.approx(record["loss"], rel=1e-9)

    def test_monitor_recorded_per_epoch(self):
        f = backing_classifier()
        held_out = toy_mels(4, seed=7)
        result = train_substitute(
            BlackBoxOracle(f), toy_mels(), toy_cfg(), monitor=lambda s: agreement(s, f, held_out)
        )
        assert all(0.0 <= h["heldOutAgreement"] <= 1.0 for h in result.history)
        assert [h["epoch"] for h in result.history] == [1, 2, 3]

    def test_empty_dataset(self):
        with pytest.raises(InvalidArgumentError):
            train_substitute(BlackBoxOracle(backing_classifier()), [], toy_cfg())

    @pytest.mark.parametrize("field,value", [("sigma", -1.0), ("loss_variant", "kl"), ("epochs", 0)])
    def test_invalid_config(self, field, value):
        with pytest.raises(InvalidArgumentError):
            train_substitute(BlackBoxOracle(backing_classifier()), toy_mels(), toy_cfg(**{field: value}))

    def test_transformed_sample_depends_on_epoch_and_index(self):
        m = toy_mels(1)[0]
        a = transformed_sample(m, 1.0, 0, 0, 0)
        np.testing.assert_array_equal(a, transformed_sample(m, 1.0, 0, 0, 0))
        assert not np.array_equal(a, transformed_sample(m, 1.0, 0, 1, 0))
        assert not np.array_equal(a, transformed_sample(m, 1.0, 0, 0, 1))


class TestDistillStateFile:
    """Test DSTPART1 save/load of an interrupted run"""

    def interrupted(self, cfg, budget=13):
        oracle = BlackBoxOracle(backing_classifier(), query_budget=budget)
        with pytest.raises(DistillationInterrupted) as info:
            train_substitute(oracle, toy_mels(), cfg)
        return info.value.state

    def test_fields_survive_file(self, tmp_path):
        state = self.interrupted(toy_cfg(cache_queries=False))
        loaded = load_distill_state(save_distill_state(tmp_path / "substitute.partial", state))

        assert (loaded.epoch, loaded.batch_start, loaded.n_samples) == (1, 0, 10)
        assert loaded.query_count == 13
        assert sorted(loaded.pending) == sorted(state.pending) and len(loaded.pending) == 3
        assert loaded.history == state.history
        assert loaded.epoch_totals == state.epoch_totals
        assert loaded.optimizer_state["t"] == state.optimizer_state["t"]
        for a, b in zip(loaded.optimizer_state["m"], state.optimizer_state["m"]):
            np.testing.assert_allclose(a, b, rtol=1e-6, atol=1e-12)

    def test_resume_from_file_tracks_uninterrupted_run(self, tmp_path):
        mels, cfg = toy_mels(), toy_cfg(cache_queries=False)
        reference = train_substitute(BlackBoxOracle(backing_classifier()), mels, cfg)

        path = save_distill_state(tmp_path / "substitute.partial", self.interrupted(cfg))
        state = load_distill_state(path)
        oracle = BlackBoxOracle(backing_classifier(), spent=state.query_count)
        resumed = train_substitute(oracle, mels, cfg, resume=state)

        assert [h["queryCount"] for h in resumed.history] == [10, 20, 30]
        assert resumed.history[0] == reference.history[0]
        for got, want in zip(resumed.history[1:], reference.history[1:]):
            assert got["loss"] == pytest.approx(want["loss"], rel=1e-4)
        for got, want in zip(resumed.substitute.parameters(), reference.substitute.parameters()):
            np.testing.assert_allclose(got, want, atol=1e-4)

    def test_cached_answers_survive_file(self, tmp_path):
        state = self.interrupted(toy_cfg(epochs=2), budget=6)
        loaded = load_distill_state(save_distill_state(tmp_path / "substitute.partial", state))
        assert sorted(loaded.cache) == sorted(state.cache)
        for index, posterior in state.cache.items():
            np.testing.assert_allclose(loaded.cache[index], posterior, rtol=1e-6)

    def test_truncated_file(self, tmp_path):
        path = save_distill_state(tmp_path / "substitute.partial", self.interrupted(toy_cfg(), budget=6))
        with pytest.raises(ArtifactFormatError):
            decode_distill_state(path.read_bytes()[:-3])


class TestOracleOpacity:
    """Distillation reaches the oracle only through query()"""

    def test_source_never_touches_backing(self):
        source = inspect.getsource(distill)
        assert "__backing" not in source
        assert "fingerprint" not in source
        assert "forward(" not in source.replace("mlp_forward(", "")

    def test_query_only_oracle_gives_same_substitute(self):
        f = backing_classifier()
        via_wrapper = train_substitute(BlackBoxOracle(f), toy_mels(), toy_cfg())
        via_query_only = train_substitute(QueryOnlyOracle(f), toy_mels(), toy_cfg())
        assert classifier_hash(via_wrapper.substitute) == classifier_hash(via_query_only.substitute)


class FlaskSession:
    """requests.Session lookalike that routes to a Flask test client"""

    class Response:
        def __init__(self, raw):
            self.status_code = raw.status_code
            self.content = raw.get_data()
            self.text = raw.get_data(as_text=True)
            self._json = raw.get_json(silent=True)

        def json(self):
            return self._json

    def __init__(self, client, prefix="http://oracle.test"):
        self.client = client
        self.prefix = prefix

    def get(self, url, timeout=None):
        return self.Response(self.client.get(url[len(self.prefix):]))

    def post(self, url, data=None, headers=None, timeout=None):
        return self.Response(self.client.post(url[len(self.prefix):], data=data, headers=headers))


class TestService:
    """Test the HTTP oracle and its client"""

    def test_health(self):
        client = create_app(BlackBoxOracle(backing_classifier(), query_budget=5)).test_client()
        body = client.get("/health").get_json()
        assert body["status"] == "ok"
        assert (body["nSpeakers"], body["nMels"], body["queryBudget"]) == (N_SPEAKERS, N_MELS, 5)

    def test_query_round_trip(self):
        f = backing_classifier()
        client = create_app(BlackBoxOracle(f)).test_client()
        mel = MelSpectrogram(values=toy_mels(1)[0])
        response = client.post("/query", data=encode_mel(mel))
        assert response.status_code == 200
        assert response.mimetype == "application/octet-stream"
        posterior, query_count = decode_posterior(response.get_data())
        stored = np.asarray(mel.values, dtype=np.float32).astype(np.float64)
        expected = forward(f, stored).astype(np.float32).astype(np.float64)
        np.testing.assert_allclose(posterior, expected, rtol=1e-6)
        assert query_count == 1

    def test_reply_layout(self):
        """magic, u64 query count, u32 length, then float32 entries"""
        data = encode_posterior(np.array([0.25, 0.75]), query_count=7)
        assert data[:8] == b"POSTER01"
        assert int.from_bytes(data[8:16], "little") == 7
        assert int.from_bytes(data[16:20], "little") == 2
        np.testing.assert_array_equal(np.frombuffer(data[20:], dtype="<f4"), [0.25, 0.75])

    def test_truncated_reply(self):
        data = encode_posterior(np.array([0.5, 0.5]), query_count=1)
        with pytest.raises(ArtifactFormatError):
            decode_posterior(data[:-2])
        with pytest.raises(ArtifactFormatError):
            decode_posterior(data + b"\x00")

    def test_malformed_body(self):
        client = create_app(BlackBoxOracle(backing_classifier())).test_client()
        assert client.post("/query", data=b"not a mel").status_code == 400

    def test_wrong_mel_bins(self):
        client = create_app(BlackBoxOracle(backing_classifier())).test_client()
        mel = MelSpectrogram(values=np.zeros((3, N_MELS + 1)))
        assert client.post("/query", data=encode_mel(mel)).status_code == 400

    def test_budget_maps_to_429(self):
        client = create_app(BlackBoxOracle(backing_classifier(), query_budget=0)).test_client()
        mel = MelSpectrogram(values=toy_mels(1)[0])
        assert client.post("/query", data=encode_mel(mel)).status_code == 429

    def test_remote_oracle_drives_distillation(self):
        f = backing_classifier()
        server_side = BlackBoxOracle(f)
        remote = RemoteOracle("http://oracle.test", session=FlaskSession(create_app(server_side).test_client()))
        assert (remote.n_speakers, remote.n_mels) == (N_SPEAKERS, N_MELS)

        result = train_substitute(remote, toy_mels(), toy_cfg())
        assert result.query_count == server_side.query_count == 10

    def test_remote_budget_error(self):
        server_side = BlackBoxOracle(backing_classifier(), query_budget=0)
        remote = RemoteOracle("http://oracle.test/", session=FlaskSession(create_app(server_side).test_client()))
        with pytest.raises(BudgetExhaustedError):
            remote.query(toy_mels(1)[0])


@functools.cache
def corpus_distillation():
    """Black box and three total-loss substitutes on the default synthetic corpus"""
    corpus = build_corpus(DatasetSpec())
    train_set, test_set = split_by_content(corpus, 5)
    backing = train([(u.mel, u.speaker) for u in train_set], TrainConfig(seed=0)).classifier
    substitutes = [
        train_substitute(BlackBoxOracle(backing), [u.mel.values for u in train_set], DistillConfig(seed=seed)).substitute
        for seed in range(3)
    ]
    return backing, test_set, substitutes


@pytest.mark.slow
class TestSyntheticCorpusDistillation:
    """Training-run oracle: total-loss substitute agrees with the oracle"""

    def test_agreement_over_three_seeds(self):
        backing, test_set, substitutes = corpus_distillation()
        held_out = [u.mel.values for u in test_set]
        scores = [agreement(s, backing, held_out) for s in substitutes]
        assert np.mean(scores) >= 0.85

    def test_accuracy_tracks_oracle(self):
        """Substitute accuracy on ground truth stays within 0.05 of the oracle's own"""
        backing, test_set, substitutes = corpus_distillation()
        labelled = [(u.mel.values, u.speaker) for u in test_set]
        oracle_accuracy = accuracy(backing, labelled)
        gaps = [abs(accuracy(s, labelled) - oracle_accuracy) for s in substitutes]
        assert np.mean(gaps) <= 0.05
