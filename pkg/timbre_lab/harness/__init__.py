from timbre_lab.harness.experiment import (
    ABLATION_COLUMNS,
    BLACKBOX_STR,
    BLACKBOX_TOTAL,
    COMPARISON_COLUMNS,
    METHOD_LABELS,
    METHODS,
    POSTHOC_PGD,
    RECON,
    WHITEBOX,
    AblationResult,
    ComparisonResult,
    ExperimentConfig,
    ExperimentData,
    FakeAudioResult,
    attack_requests,
    data_from_corpus,
    distill_substitute,
    generate_fake_audio,
    generator_pairs,
    map_seeds,
    attack_workers,
    posthoc_pgd,
    prepare_data,
    run_ablation,
    run_agreement,
    run_method_comparison,
    seeded,
    train_adv_generator,
    train_classifier,
    train_recon_generator,
)
from timbre_lab.harness.metrics import (
    AttackReport,
    eval_attack,
    eval_mels,
    generate_for,
    mean_l1,
    oracle_labels,
    run_agreement_eval,
)
from timbre_lab.harness.report import (
    records_frame,
    render_table,
    summarise,
    utc_now,
    write_report,
    write_run_manifest,
)
