"""
DSTPART1 files: an interrupted distillation run, saved so a later process
can continue it.

Layout (little-endian):
    magic "DSTPART1"
    u32 n_samples | u32 epoch | u32 batch_start | u64 query_count
    u64 length + SPKCLF01 bytes of the substitute
    u64 length + UTF-8 JSON {"optimizer", "t", "epochTotals", "history"}
    Adam only: float32 m blocks then float32 v blocks, one per parameter
    u32 n_cached, n_cached x (u32 index, float32 posterior[n_speakers])
    u32 n_pending, same layout

Parameters, moments and posteriors are stored as float32, so a run resumed
from a file matches the uninterrupted run up to that rounding.
"""
import json
from pathlib import Path

from timbre_lab.binio import Reader, Writer, atomic_write_bytes
from timbre_lab.errors import ArtifactFormatError, MissingPrerequisiteError
from timbre_lab.logs import to_json_line
from timbre_lab.speakernet import decode_classifier, encode_classifier
from timbre_lab.substitute.distill import DistillState

PARTIAL_MAGIC = b"DSTPART1"


def _write_posteriors(writer, table):
    writer.u32(len(table))
    for index in sorted(table):
        writer.u32(index).floats(table[index])


def _read_posteriors(reader, n_speakers):
    return {reader.u32(): reader.floats((n_speakers,)) for _ in range(reader.u32())}


def encode_distill_state(state):
    optimizer_state = state.optimizer_state
    meta = {
        "optimizer": optimizer_state.get("name"),
        "t": optimizer_state.get("t", 0),
        "epochTotals": state.epoch_totals,
        "history": state.history,
    }
    writer = Writer(PARTIAL_MAGIC)
    writer.u32(state.n_samples, state.epoch, state.batch_start).u64(state.query_count)
    writer.blob(encode_classifier(state.substitute))
    writer.blob(to_json_line(meta).encode("utf-8"))
    if meta["optimizer"] == "adam":
        for moment in optimizer_state["m"] + optimizer_state["v"]:
            writer.floats(moment)
    _write_posteriors(writer, state.cache)
    _write_posteriors(writer, state.pending)
    return writer.getvalue()


def decode_distill_state(data, what="distillation state"):
    """
    Parse DSTPART1 bytes.

    Raises:
        ArtifactFormatError: On bad magic, truncation, a corrupt embedded
            substitute or unreadable metadata
    """
    reader = Reader(data, PARTIAL_MAGIC, what)
    n_samples, epoch, batch_start = reader.u32(3)
    query_count = reader.u64()
    substitute = decode_classifier(reader.blob(), what=f"{what} substitute")
    try:
        meta = json.loads(reader.blob().decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ArtifactFormatError(f"{what}: unreadable metadata ({e})") from e

    optimizer_state = {"name": meta.get("optimizer")}
    if optimizer_state["name"] == "adam":
        shapes = [p.shape for p in substitute.parameters()]
        optimizer_state["t"] = int(meta["t"])
        optimizer_state["m"] = [reader.floats(shape) for shape in shapes]
        optimizer_state["v"] = [reader.floats(shape) for shape in shapes]
    cache = _read_posteriors(reader, substitute.n_speakers)
    pending = _read_posteriors(reader, substitute.n_speakers)
    reader.finish()
    return DistillState(
        substitute=substitute,
        optimizer_state=optimizer_state,
        epoch=epoch,
        batch_start=batch_start,
        cache=cache,
        pending=pending,
        history=meta.get("history", []),
        n_samples=n_samples,
        epoch_totals=meta.get("epochTotals", {}),
        query_count=query_count,
    )


def save_distill_state(path, state):
    return atomic_write_bytes(path, encode_distill_state(state))


def load_distill_state(path):
    path = Path(path)
    if not path.exists():
        raise MissingPrerequisiteError(path)
    return decode_distill_state(path.read_bytes(), what=str(path))
