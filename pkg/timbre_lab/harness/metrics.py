"""
Attack-success and agreement metrics.

Counts are kept as integers; rates are only formed when a report is
rendered, so a rendered acc is always exactly n_success / n_total.
"""
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from timbre_lab.errors import InvalidArgumentError
from timbre_lab.generator import generate
from timbre_lab.speakernet import argmax_label, predict


@dataclass
class AttackReport:
    """Targeted top-1 success counts for one method"""
    method: str
    n_total: int = 0
    n_success: int = 0
    per_sample: list = field(default_factory=list)

    @property
    def fraction(self):
        return Fraction(self.n_success, self.n_total)

    @property
    def acc(self):
        return self.n_success / self.n_total

    def add(self, sample_id, target, predicted):
        success = int(predicted) == int(target)
        self.per_sample.append({
            "sampleId": sample_id,
            "target": int(target),
            "predicted": int(predicted),
            "success": success,
        })
        self.n_total += 1
        self.n_success += int(success)

    def summary(self):
        return {
            "method": self.method,
            "nTotal": self.n_total,
            "nSuccess": self.n_success,
            "acc": self.acc,
            "fraction": f"{self.n_success}/{self.n_total}",
        }


def eval_mels(mels, targets, classifier, sample_ids, method="mels"):
    """
    Score already-generated mels against a classifier.

    Args:
        mels (list): Mel matrices or MelSpectrograms
        targets (list[int]): Intended speaker per mel
        classifier (SpeakerClassifier): Classifier being fooled
        sample_ids (list[str]): Identifiers kept in per-sample records
        method (str): Label for the report

    Returns:
        AttackReport

    Raises:
        InvalidArgumentError: If the inputs are empty or of different lengths
    """
    if len(mels) == 0:
        raise InvalidArgumentError("attack evaluation needs at least one sample")
    if not len(mels) == len(targets) == len(sample_ids):
        raise InvalidArgumentError(
            f"got {len(mels)} mels, {len(targets)} targets and {len(sample_ids)} sample ids"
        )
    report = AttackReport(method=method)
    for m, target, sample_id in zip(mels, targets, sample_ids):
        report.add(sample_id, target, predict(classifier, m))
    return report


def generate_for(g, testset):
    """Generator output for every (sample id, content code, speaker) request"""
    return [generate(g, content, speaker) for _, content, speaker in testset]


def eval_attack(g, target_classifier, testset, method="generator"):
    """
    Generate one mel per request and count targeted successes.

    Args:
        g (CondGenerator): Generator under test
        target_classifier (SpeakerClassifier): Classifier the fakes must fool
        testset (list): (sample id, ContentCode, target speaker) triples

    Returns:
        AttackReport
    """
    if len(testset) == 0:
        raise InvalidArgumentError("attack evaluation needs at least one request")
    mels = generate_for(g, testset)
    return eval_mels(mels, [t for _, _, t in testset], target_classifier, [s for s, _, _ in testset], method)


def oracle_labels(oracle, mels):
    """Top-1 labels of the oracle, obtained through ``query`` only."""
    return [argmax_label(oracle.query(m)) for m in mels]


def run_agreement_eval(substitute, oracle, testset):
    """
    Agreement table: how closely the substitute follows the black box.

    Args:
        substitute (SpeakerClassifier): Distilled classifier
        oracle (BlackBoxOracle): Queried once per test mel
        testset (list): (mel, ground-truth label) pairs

    Returns:
        dict: oracleAgreement, substituteAccuracy, oracleAccuracy, nTest
    """
    if len(testset) == 0:
        raise InvalidArgumentError("agreement evaluation needs at least one labelled mel")
    truth = np.array([int(y) for _, y in testset])
    sub = np.array([predict(substitute, m) for m, _ in testset])
    black = np.array(oracle_labels(oracle, [m for m, _ in testset]))
    return {
        "oracleAgreement": float(np.mean(sub == black)),
        "substituteAccuracy": float(np.mean(sub == truth)),
        "oracleAccuracy": float(np.mean(black == truth)),
        "nTest": len(testset),
    }


def mean_l1(mels, references):
    """Mean absolute difference in dB over paired mels"""
    return float(np.mean([
        np.mean(np.abs(np.asarray(getattr(a, "values", a)) - np.asarray(getattr(b, "values", b))))
        for a, b in zip(mels, references)
    ]))
