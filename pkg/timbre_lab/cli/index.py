"""
timbre-lab command line

Subcommands:
    synth-data      synthesize the corpus into <out>/corpus (or ingest --wav-dir)
    train ROLE      blackbox | whitebox | substitute | generator | generator-adv
    eval KIND       attack | agreement | ablation | compare
    serve-oracle    expose the black box over HTTP for query-only access

Usage:
    python app.py synth-data --config config/default.json
    python app.py train blackbox --seed 0
    python app.py train generator-adv --classifier substitute
    python app.py eval compare --config config/desk.json --threads 4
    python app.py serve-oracle --port 8080

Output directory layout: corpus/, checkpoints/, logs/, reports/, manifests/, fake/.
"""
import argparse
from pathlib import Path

from timbre_lab.audiofeat import build_corpus, corpus_from_wavs, read_corpus, write_corpus
from timbre_lab.binio import atomic_write_text, sha256_file
from timbre_lab.cli.config import load_config
from timbre_lab.errors import (
    ArtifactFormatError,
    BudgetExhaustedError,
    ConfigError,
    InvalidArgumentError,
    MissingPrerequisiteError,
)
from timbre_lab.generator import load_generator, save_generator
from timbre_lab.harness import (
    POSTHOC_PGD,
    data_from_corpus,
    distill_substitute,
    generate_fake_audio,
    records_frame,
    run_ablation,
    run_agreement_eval,
    run_method_comparison,
    train_adv_generator,
    train_classifier,
    train_recon_generator,
    utc_now,
    write_report,
    write_run_manifest,
)
from timbre_lab.logs import log_event, log_exception, to_json_line
from timbre_lab.speakernet import accuracy, agreement, load_classifier, save_classifier
from timbre_lab.substitute import (
    BlackBoxOracle,
    DistillationInterrupted,
    create_app,
    load_distill_state,
    save_distill_state,
)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_IO = 4
EXIT_BUDGET = 5

TRAIN_ROLES = ("blackbox", "whitebox", "substitute", "generator", "generator-adv")
EVAL_KINDS = ("attack", "agreement", "ablation", "compare")
ATTACK_CLASSIFIERS = ("whitebox", "blackbox", "substitute")


class Workspace:
    """Paths under the output directory"""

    def __init__(self, out_dir):
        self.root = Path(out_dir)
        self.corpus = self.root / "corpus"
        self.checkpoints = self.root / "checkpoints"
        self.logs = self.root / "logs"

    def checkpoint(self, name):
        return self.checkpoints / f"{name}.ckpt"

    def partial(self, name):
        return self.checkpoints / f"{name}.partial"

    def require(self, name, hint):
        path = self.checkpoint(name)
        if not path.exists():
            raise MissingPrerequisiteError(path, hint)
        return path

    def write_log(self, name, records):
        return atomic_write_text(self.logs / f"{name}.jsonl", "".join(to_json_line(r) + "\n" for r in records))


def _load_data(ws, cfg):
    corpus = read_corpus(ws.corpus)
    return data_from_corpus(corpus, cfg.n_test_contents, cfg.dataset.seed)


def _adv_name(classifier):
    return f"generator_adv_{classifier}"


def cmd_synth_data(args, cfg, ws):
    if args.wav_dir:
        corpus = corpus_from_wavs(args.wav_dir, cfg.mel)
    else:
        corpus = build_corpus(cfg.dataset, cfg.mel, workers=cfg.threads)
    manifest = write_corpus(ws.corpus, corpus)
    return {"corpus": manifest}, {}


def cmd_train(args, cfg, ws):
    data = _load_data(ws, cfg)
    seed = cfg.seeds[0]
    role = args.role

    if role in ("blackbox", "whitebox"):
        classifier = train_classifier(getattr(cfg, role), data, seed)
        path = save_classifier(ws.checkpoint(role), classifier)
        log_event("INFO", "Classifier checkpoint written", role=role, path=str(path),
                  testAccuracy=accuracy(classifier, data.labelled("test")))
        return {role: path}, {role: sha256_file(path)}

    if role == "substitute":
        backing_path = ws.require("blackbox", "run `train blackbox` first")
        backing = load_classifier(backing_path)
        partial_path = ws.partial("substitute")
        resume = None
        if partial_path.exists():
            resume = load_distill_state(partial_path)
            log_event("INFO", "Resuming distillation", path=str(partial_path), epoch=resume.epoch + 1,
                      batchStart=resume.batch_start, queryCount=resume.query_count)
        try:
            result, oracle = distill_substitute(cfg.distill, backing, data, seed, resume=resume)
        except DistillationInterrupted as e:
            save_distill_state(partial_path, e.state)
            log_event("WARNING", "Distillation state saved", path=str(partial_path), queryCount=e.state.query_count)
            raise
        path = save_classifier(ws.checkpoint("substitute"), result.substitute)
        partial_path.unlink(missing_ok=True)
        log_path = ws.write_log("substitute", result.history)
        log_event("INFO", "Substitute agreement", oracleAgreement=agreement(result.substitute, backing, data.mels("test")),
                  queryCount=oracle.query_count)
        return (
            {"substitute": path, "runLog": log_path},
            {"blackbox": sha256_file(backing_path), "substitute": sha256_file(path)},
        )

    if role == "generator":
        result = train_recon_generator(cfg.generator, data, seed)
        path = save_generator(ws.checkpoint("generator"), result.generator)
        log_path = ws.write_log("generator", result.history)
        return {"generator": path, "runLog": log_path}, {"generator": sha256_file(path)}

    base_path = ws.require("generator", "run `train generator` first")
    target_path = ws.require(args.classifier, f"run `train {args.classifier}` first")
    g = load_generator(base_path)
    f = load_classifier(target_path)
    result = train_adv_generator(cfg.generator, g, f, cfg.perturbation, data, seed, cfg.threads)
    name = _adv_name(args.classifier)
    path = save_generator(ws.checkpoint(name), result.generator)
    log_path = ws.write_log(name, result.history)
    hashes = {"generator": sha256_file(base_path), args.classifier: sha256_file(target_path), name: sha256_file(path)}
    return {name: path, "runLog": log_path}, hashes


def cmd_eval(args, cfg, ws):
    kind = args.kind
    if kind == "attack":
        name = args.generator or _adv_name(args.classifier)
        g_path = ws.require(name, f"run `train generator-adv --classifier {args.classifier}` first")
        target_path = ws.require(args.target, f"run `train {args.target}` first")
        data = _load_data(ws, cfg)
        requests = [(u.content_id, u.speaker) for u in data.test]
        result = generate_fake_audio(load_generator(g_path), load_classifier(target_path), requests, ws.root,
                                     cfg.dataset.seed, method=name)
        summary = result.report.summary()
        paths = write_report(
            ws.root, "attack", result.report.per_sample,
            (f"Attack success of {name} against {args.target}", records_frame([summary])),
        )
        return (
            {"report": paths[0], "table": paths[1], "fakeDir": ws.root / "fake"},
            {name: sha256_file(g_path), args.target: sha256_file(target_path)},
        )

    if kind == "agreement":
        sub_path = ws.require("substitute", "run `train substitute` first")
        backing_path = ws.require("blackbox", "run `train blackbox` first")
        data = _load_data(ws, cfg)
        scores = run_agreement_eval(
            load_classifier(sub_path), BlackBoxOracle(load_classifier(backing_path)), data.labelled("test")
        )
        paths = write_report(ws.root, "agreement", [scores], ("Substitute agreement", records_frame([scores])))
        return (
            {"report": paths[0], "table": paths[1]},
            {"substitute": sha256_file(sub_path), "blackbox": sha256_file(backing_path)},
        )

    data = _load_data(ws, cfg)
    if kind == "ablation":
        result = run_ablation(cfg, data)
        paths = write_report(
            ws.root, "ablation", result.table.to_dict("records"),
            ("Loss ablation per seed", result.table), ("Loss ablation summary", result.summary),
        )
        return {"report": paths[0], "table": paths[1]}, result.hashes

    result = run_method_comparison(cfg, data)
    paths = write_report(
        ws.root, "compare", result.table.to_dict("records"),
        ("Method comparison per seed", result.table), ("Method comparison summary", result.summary),
    )
    samples = []
    for (seed, method), report in result.reports.items():
        for record in report.per_sample:
            sample = {"seed": seed, "method": method, **record}
            if method == POSTHOC_PGD:
                sample["pgd"] = result.pgd_records[(seed, record["sampleId"])]
            samples.append(sample)
    sample_paths = write_report(ws.root, "compare_samples", samples)
    return {"report": paths[0], "table": paths[1], "samples": sample_paths[0]}, result.hashes


def cmd_serve_oracle(args, cfg, ws):
    backing_path = ws.require("blackbox", "run `train blackbox` first")
    oracle = BlackBoxOracle(load_classifier(backing_path), query_budget=cfg.distill.query_budget)
    fingerprint = oracle.fingerprint()
    log_event("INFO", "Oracle service starting", host=args.host, port=args.port, fingerprint=fingerprint,
              queryBudget=oracle.query_budget)
    create_app(oracle).run(host=args.host, port=args.port)
    log_event("INFO", "Oracle service stopped", queryCount=oracle.query_count)
    return {"blackbox": backing_path}, {"blackbox": sha256_file(backing_path), "oracleFingerprint": fingerprint}


COMMANDS = {"synth-data": cmd_synth_data, "train": cmd_train, "eval": cmd_eval, "serve-oracle": cmd_serve_oracle}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="timbre-lab",
        description="Timbre-reserved adversarial attack lab for speaker identification",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python app.py synth-data
  python app.py train blackbox
  python app.py train substitute
  python app.py train generator-adv --classifier substitute
  python app.py eval compare --config config/desk.json
  python app.py serve-oracle --host 0.0.0.0 --port 8080
        """,
    )
    parser.add_argument("--config", help="JSON config file (default: built-in defaults)")
    parser.add_argument("--seed", type=int, help="Run with this single seed")
    parser.add_argument("--threads", type=int, help="Worker threads (default: 1, exact determinism either way)")
    parser.add_argument("--out-dir", help="Output root (default: runs)")

    sub = parser.add_subparsers(dest="command", required=True)
    synth = sub.add_parser("synth-data", help="Synthesize the speaker corpus")
    synth.add_argument("--wav-dir", help="Build the corpus from spkXX-uttYYY.wav recordings instead")

    train = sub.add_parser("train", help="Train one model")
    train.add_argument("role", choices=TRAIN_ROLES)
    train.add_argument("--classifier", choices=ATTACK_CLASSIFIERS, default="whitebox",
                       help="Frozen classifier attacked by generator-adv (default: whitebox)")

    ev = sub.add_parser("eval", help="Evaluate and write a report")
    ev.add_argument("kind", choices=EVAL_KINDS)
    ev.add_argument("--classifier", choices=ATTACK_CLASSIFIERS, default="whitebox",
                    help="Which adversarial generator to score in `eval attack` (default: whitebox)")
    ev.add_argument("--generator", help="Checkpoint name to score instead, e.g. generator")
    ev.add_argument("--target", choices=("blackbox", "whitebox", "substitute"), default="blackbox",
                    help="Classifier the fake audio must fool (default: blackbox)")

    serve = sub.add_parser("serve-oracle", help="Serve the black-box classifier over HTTP")
    serve.add_argument("--host", default="127.0.0.1", help="Bind address (default: 127.0.0.1)")
    serve.add_argument("--port", type=int, default=8080, help="Port (default: 8080)")
    return parser


def manifest_name(args):
    if args.command == "train":
        return f"train-{args.role}"
    if args.command == "eval":
        return f"eval-{args.kind}"
    return args.command


def main(argv=None):
    """
    Parse arguments, run one subcommand and map failures to exit codes:
    0 success, 2 config/validation, 3 missing prerequisite, 4 I/O,
    5 budget exhausted, 1 anything else.
    """
    args = build_parser().parse_args(argv)
    started = utc_now()
    command = manifest_name(args)
    try:
        cfg = load_config(args.config, seed=args.seed, threads=args.threads, out_dir=args.out_dir)
        ws = Workspace(cfg.out_dir)
        log_event("INFO", "Command started", command=command, seeds=cfg.seeds, outDir=str(ws.root))
        artifacts, hashes = COMMANDS[args.command](args, cfg, ws)
        manifest = write_run_manifest(ws.root, command, cfg.to_dict(), cfg.seeds, started, artifacts, hashes)
        log_event("INFO", "Command finished", command=command, manifest=str(manifest))
        return EXIT_OK
    except ConfigError as e:
        log_event("ERROR", "Invalid configuration", command=command, key=e.key, error=str(e))
        return EXIT_CONFIG
    except ArtifactFormatError as e:
        log_event("ERROR", "Corrupt artifact", command=command, error=str(e))
        return EXIT_IO
    except InvalidArgumentError as e:
        log_event("ERROR", "Validation failed", command=command, error=str(e))
        return EXIT_CONFIG
    except MissingPrerequisiteError as e:
        log_event("ERROR", "Missing prerequisite", command=command, artifact=e.artifact, error=str(e))
        return EXIT_MISSING
    except BudgetExhaustedError as e:
        log_event("ERROR", "Oracle budget exhausted", command=command, error=str(e))
        return EXIT_BUDGET
    except OSError as e:
        log_event("ERROR", "I/O error", command=command, path=getattr(e, "filename", None), error=str(e))
        return EXIT_IO
    except Exception as e:
        log_exception("Unexpected error", e, command=command)
        return EXIT_UNEXPECTED
