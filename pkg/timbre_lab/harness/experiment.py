"""
Experiment Pipelines

Desk-scale versions of the three evaluation tables plus the fake-audio
generation pipeline:

- run_method_comparison: five generation methods scored against the black box
- run_ablation: substitute loss variants vs oracle agreement and accuracy
- run_agreement: configured-loss substitute vs black box per seed
- generate_fake_audio: (content, speaker) requests -> persisted mels + report

Every seed trains its own classifiers, substitutes and generators from the
same corpus, so seeds are independent and can run on a thread pool.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from timbre_lab.advconstraint import Perturbation, PerturbationConfig, make_adversarial_target, optimize_many
from timbre_lab.audiofeat import DatasetSpec, MelConfig, build_corpus, save_mel, split_by_content
from timbre_lab.binio import as_float32_values
from timbre_lab.errors import InvalidArgumentError
from timbre_lab.generator import (
    GeneratorConfig,
    generator_for_pairs,
    joint_train_adv,
    make_content_code,
    pairs_from_corpus,
    train_recon,
)
from timbre_lab.harness.metrics import eval_mels, generate_for, mean_l1, run_agreement_eval
from timbre_lab.harness.report import records_frame, summarise
from timbre_lab.logs import log_event
from timbre_lab.numkernel import derive_seed
from timbre_lab.speakernet import TrainConfig, agreement, classifier_hash, train
from timbre_lab.substitute import LOSS_VARIANTS, BlackBoxOracle, DistillConfig, train_substitute

RECON = "recon"
POSTHOC_PGD = "posthoc_pgd"
WHITEBOX = "whitebox"
BLACKBOX_STR = "blackbox_str_only"
BLACKBOX_TOTAL = "blackbox_total"

METHOD_LABELS = {
    RECON: "VC recon-only",
    POSTHOC_PGD: "VC + mel-domain PGD",
    WHITEBOX: "White-box joint",
    BLACKBOX_STR: "Black-box joint (str_only)",
    BLACKBOX_TOTAL: "Black-box joint (total)",
}
METHODS = tuple(METHOD_LABELS)

COMPARISON_COLUMNS = ("seed", "method", "label", "nTotal", "nSuccess", "acc", "l1ToReference", "l1ToRecon")
ABLATION_COLUMNS = ("seed", "lossVariant", "oracleAgreement", "substituteAccuracy", "oracleAccuracy", "queryCount")


@dataclass
class ExperimentConfig:
    """Every knob of a desk-scale experiment, one dataclass per section"""
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    mel: MelConfig = field(default_factory=MelConfig)
    blackbox: TrainConfig = field(default_factory=TrainConfig)
    whitebox: TrainConfig = field(default_factory=lambda: TrainConfig(hidden=[32], seed=1))
    perturbation: PerturbationConfig = field(default_factory=PerturbationConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    seeds: list = field(default_factory=lambda: [0])
    out_dir: str = "runs"
    threads: int = 1
    n_test_contents: int = 5

    def validate(self):
        self.dataset.validate()
        for section in (self.blackbox, self.whitebox, self.perturbation, self.generator, self.distill):
            section.validate()
        if len(self.seeds) == 0:
            raise InvalidArgumentError("at least one seed is required")
        if self.threads < 1:
            raise InvalidArgumentError(f"threads must be >= 1, got {self.threads}")
        if not 0 < self.n_test_contents < self.dataset.utterances_per_speaker:
            raise InvalidArgumentError(
                f"n_test_contents must be in (0, {self.dataset.utterances_per_speaker}), got {self.n_test_contents}"
            )
        if self.mel.sample_rate != self.dataset.sample_rate:
            raise InvalidArgumentError(
                f"mel.sample_rate {self.mel.sample_rate} does not match dataset.sample_rate {self.dataset.sample_rate}"
            )

    def to_dict(self):
        return asdict(self)


@dataclass
class ExperimentData:
    """Corpus split by content id; content codes are fixed by the dataset seed"""
    train: list
    test: list
    n_speakers: int
    code_seed: int

    def labelled(self, split):
        return [(u.mel, u.speaker) for u in getattr(self, split)]

    def mels(self, split):
        return [u.mel for u in getattr(self, split)]


@dataclass
class ComparisonResult:
    reports: dict
    table: object
    summary: object
    hashes: dict
    classifiers: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    pgd_records: dict = field(default_factory=dict)


@dataclass
class AblationResult:
    table: object
    summary: object
    hashes: dict


@dataclass
class FakeAudioResult:
    paths: list
    report: object


def prepare_data(cfg):
    """Synthesize the corpus and hold out the last ``n_test_contents`` content ids."""
    corpus = build_corpus(cfg.dataset, cfg.mel, workers=cfg.threads)
    return data_from_corpus(corpus, cfg.n_test_contents, cfg.dataset.seed)


def data_from_corpus(corpus, n_test_contents, code_seed):
    train_set, test_set = split_by_content(corpus, n_test_contents)
    return ExperimentData(
        train=train_set,
        test=test_set,
        n_speakers=max(u.speaker for u in corpus) + 1,
        code_seed=code_seed,
    )


def seeded(section, seed):
    """Copy of a config section whose seed is derived from the experiment seed."""
    return replace(section, seed=derive_seed(section.seed, seed))


def map_seeds(fn, seeds, threads):
    """fn(seed) for every seed, results in seed-list order."""
    if threads <= 1 or len(seeds) == 1:
        return [fn(seed) for seed in seeds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, seeds))


def train_classifier(section, data, seed):
    """Speaker classifier on the labelled training split"""
    result = train(data.labelled("train"), seeded(section, seed), n_speakers=data.n_speakers)
    return result.classifier


def distill_substitute(section, backing, data, seed, loss_variant=None, resume=None):
    """
    Distil a substitute from a black box wrapping ``backing``.

    The held-out agreement logged per epoch is computed by the experimenter,
    not by the distillation loop, which only ever calls ``query``. When
    resuming, the oracle's count continues from the saved state and
    ``query_budget`` allows that many further queries.

    Returns:
        tuple: (DistillResult, BlackBoxOracle)
    """
    dcfg = seeded(section, seed)
    if loss_variant is not None:
        dcfg = replace(dcfg, loss_variant=loss_variant)
    spent = 0 if resume is None else resume.query_count
    budget = None if dcfg.query_budget is None else spent + dcfg.query_budget
    oracle = BlackBoxOracle(backing, query_budget=budget, spent=spent)
    held_out = data.mels("test")
    result = train_substitute(
        oracle, data.mels("train"), dcfg, monitor=lambda s: agreement(s, backing, held_out), resume=resume
    )
    return result, oracle


def generator_pairs(data, gcfg, split="train"):
    return pairs_from_corpus(getattr(data, split), gcfg.content_dim, data.code_seed)


def attack_requests(data, content_dim, split="test"):
    """(sample id, content code, speaker) for every utterance of a split, plus reference mels"""
    requests, references = [], []
    for utt in getattr(data, split):
        requests.append((utt.sample_id, make_content_code(utt.content_id, content_dim, data.code_seed), utt.speaker))
        references.append(utt.mel)
    return requests, references


def train_recon_generator(section, data, seed):
    gcfg = seeded(section, seed)
    pairs = generator_pairs(data, gcfg)
    g = generator_for_pairs(pairs, data.n_speakers, gcfg)
    return train_recon(g, pairs, gcfg)


def train_adv_generator(section, g, f, pcfg, data, seed, threads=None):
    """Joint adversarial training; ``threads`` caps the inner attack pool below ``section.workers``."""
    gcfg = seeded(section, seed)
    if threads is not None:
        gcfg = replace(gcfg, workers=min(threads, gcfg.workers))
    return joint_train_adv(g, f, generator_pairs(data, gcfg), pcfg, gcfg)


def posthoc_pgd(f, mels, targets, pcfg, workers=1):
    """
    Mel-domain PGD on finished generator outputs; failed attacks keep their last delta.

    Returns:
        tuple: (perturbed mels, AttackOutcome per input), both in input order
    """
    outcomes = optimize_many(f, mels, targets, pcfg, workers=workers)
    perturbed = [
        make_adversarial_target(m, Perturbation(delta=o.final_delta, eps=o.final_eps, lr=pcfg.lr))
        for m, o in zip(mels, outcomes)
    ]
    return perturbed, outcomes


def attack_workers(cfg):
    """Inner attack pool size: the generator's setting, capped by the global thread count."""
    return min(cfg.threads, cfg.generator.workers)


def _comparison_row(seed, report, generated, references, recon_out):
    summary = report.summary()
    return {
        "seed": seed,
        "method": report.method,
        "label": METHOD_LABELS[report.method],
        "nTotal": summary["nTotal"],
        "nSuccess": summary["nSuccess"],
        "acc": summary["acc"],
        "l1ToReference": mean_l1(generated, references),
        "l1ToRecon": mean_l1(generated, recon_out),
    }


def _compare_one_seed(cfg, data, seed):
    blackbox = train_classifier(cfg.blackbox, data, seed)
    whitebox = train_classifier(cfg.whitebox, data, seed)
    frozen = {"blackbox": classifier_hash(blackbox), "whitebox": classifier_hash(whitebox)}

    recon = train_recon_generator(cfg.generator, data, seed).generator
    requests, references = attack_requests(data, recon.content_dim)
    targets = [t for _, _, t in requests]
    ids = [s for s, _, _ in requests]
    recon_out = generate_for(recon, requests)

    outputs = {RECON: recon_out}
    outputs[POSTHOC_PGD], outcomes = posthoc_pgd(blackbox, recon_out, targets, cfg.perturbation, attack_workers(cfg))
    joint = train_adv_generator(cfg.generator, recon, whitebox, cfg.perturbation, data, seed, cfg.threads).generator
    outputs[WHITEBOX] = generate_for(joint, requests)

    hashes = dict(frozen)
    for method, variant in ((BLACKBOX_STR, "str_only"), (BLACKBOX_TOTAL, "total")):
        distilled, _ = distill_substitute(cfg.distill, blackbox, data, seed, loss_variant=variant)
        hashes[f"substitute_{variant}"] = classifier_hash(distilled.substitute)
        adv = train_adv_generator(
            cfg.generator, recon, distilled.substitute, cfg.perturbation, data, seed, cfg.threads
        ).generator
        outputs[method] = generate_for(adv, requests)

    if classifier_hash(blackbox) != frozen["blackbox"] or classifier_hash(whitebox) != frozen["whitebox"]:
        raise RuntimeError(f"seed {seed}: a frozen classifier changed during the comparison")

    part = ComparisonResult(reports={}, table=None, summary=None, hashes={})
    rows = []
    for method in METHODS:
        report = eval_mels(outputs[method], targets, blackbox, ids, method=method)
        part.reports[(seed, method)] = report
        part.outputs[(seed, method)] = outputs[method]
        rows.append(_comparison_row(seed, report, outputs[method], references, recon_out))
        log_event("INFO", "Method evaluated", seed=seed, method=method, acc=report.acc)
    part.hashes = {f"seed{seed}/{k}": v for k, v in hashes.items()}
    part.classifiers = {(seed, "blackbox"): blackbox, (seed, "whitebox"): whitebox}
    part.pgd_records = {
        (seed, sample_id): outcome.to_record(sample_id, target)
        for sample_id, target, outcome in zip(ids, targets, outcomes)
    }
    return part, rows


def run_method_comparison(cfg, data=None):
    """
    Score five generation methods against the black-box classifier.

    Methods, all starting from the same reconstruction-trained generator:
    recon-only, recon + post-hoc mel-domain PGD against the black box,
    joint training against the white-box classifier, and joint training
    against substitutes distilled with the str_only and total losses.

    Args:
        cfg (ExperimentConfig): Validated before anything is trained
        data (ExperimentData): Reuse an existing corpus split

    Returns:
        ComparisonResult: AttackReports keyed by (seed, method), a per-seed
            table, a seed-averaged summary and every classifier hash
    """
    cfg.validate()
    data = data or prepare_data(cfg)
    results = map_seeds(lambda seed: _compare_one_seed(cfg, data, seed), cfg.seeds, cfg.threads)

    combined = ComparisonResult(reports={}, table=None, summary=None, hashes={})
    rows = []
    for part, seed_rows in results:
        combined.reports.update(part.reports)
        combined.outputs.update(part.outputs)
        combined.classifiers.update(part.classifiers)
        combined.pgd_records.update(part.pgd_records)
        combined.hashes.update(part.hashes)
        rows.extend(seed_rows)
    combined.table = records_frame(rows, COMPARISON_COLUMNS)
    combined.summary = summarise(combined.table, "method", ["acc", "l1ToReference", "l1ToRecon"])
    combined.summary.insert(1, "label", [METHOD_LABELS[m] for m in combined.summary["method"]])
    return combined


def _ablation_one_seed(cfg, data, seed, variants):
    blackbox = train_classifier(cfg.blackbox, data, seed)
    hashes = {f"seed{seed}/blackbox": classifier_hash(blackbox)}
    rows = []
    for variant in variants:
        distilled, oracle = distill_substitute(cfg.distill, blackbox, data, seed, loss_variant=variant)
        scores = run_agreement_eval(distilled.substitute, BlackBoxOracle(blackbox), data.labelled("test"))
        rows.append({"seed": seed, "lossVariant": variant, "queryCount": oracle.query_count, **scores})
        hashes[f"seed{seed}/substitute_{variant}"] = classifier_hash(distilled.substitute)
        log_event("INFO", "Ablation variant evaluated", seed=seed, lossVariant=variant, **scores)
    if classifier_hash(blackbox) != hashes[f"seed{seed}/blackbox"]:
        raise RuntimeError(f"seed {seed}: black-box classifier changed during the ablation")
    return rows, hashes


def run_ablation(cfg, data=None, variants=LOSS_VARIANTS):
    """
    Distil one substitute per loss variant and seed; score each on the
    held-out split against the black box and the ground truth.

    Returns:
        AblationResult: Per-seed rows and a per-variant mean/spread summary
    """
    cfg.validate()
    for variant in variants:
        if variant not in LOSS_VARIANTS:
            raise InvalidArgumentError(f"Unsupported loss variant: {variant} (use one of {LOSS_VARIANTS})")
    data = data or prepare_data(cfg)
    results = map_seeds(lambda seed: _ablation_one_seed(cfg, data, seed, variants), cfg.seeds, cfg.threads)
    rows, hashes = [], {}
    for seed_rows, seed_hashes in results:
        rows.extend(seed_rows)
        hashes.update(seed_hashes)
    table = records_frame(rows, ABLATION_COLUMNS)
    summary = summarise(table, "lossVariant", ["oracleAgreement", "substituteAccuracy"])
    return AblationResult(table=table, summary=summary, hashes=hashes)


def run_agreement(cfg, data=None):
    """Agreement table for the configured loss variant, one row per seed"""
    return run_ablation(cfg, data, variants=(cfg.distill.loss_variant,))


def generate_fake_audio(g, classifier, requests, run_dir, code_seed, method="fake-audio"):
    """
    Generate and persist one mel per (content id, speaker) request.

    Args:
        g (CondGenerator): Usually an adversarially trained generator
        classifier (SpeakerClassifier): Classifier the fakes are scored against
        requests (list[tuple]): (content id, speaker) pairs, content ids
            standing in for texts
        run_dir: Output root; mels go to ``<run_dir>/fake/<sample id>.mel``
        code_seed (int): Seed of the content codes the generator was trained with

    Returns:
        FakeAudioResult: Written paths (request order) and the attack report

    Raises:
        InvalidArgumentError: If a speaker is unknown to the generator
    """
    if len(requests) == 0:
        raise InvalidArgumentError("fake audio generation needs at least one request")
    for _, speaker in requests:
        if not 0 <= int(speaker) < g.n_speakers:
            raise InvalidArgumentError(f"speaker {speaker} not in [0, {g.n_speakers})")
    triples = [
        (f"fake-spk{int(s):02d}-txt{int(c):03d}", make_content_code(int(c), g.content_dim, code_seed), int(s))
        for c, s in requests
    ]
    mels = generate_for(g, triples)
    for mel in mels:
        mel.values = as_float32_values(mel.values)
    fake_dir = Path(run_dir) / "fake"
    paths = [save_mel(fake_dir / f"{sample_id}.mel", mel) for (sample_id, _, _), mel in zip(triples, mels)]
    report = eval_mels(mels, [s for _, _, s in triples], classifier, [i for i, _, _ in triples], method=method)
    log_event("INFO", "Fake audio generated", count=len(paths), acc=report.acc, directory=str(fake_dir))
    return FakeAudioResult(paths=paths, report=report)
