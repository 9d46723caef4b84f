"""
Mel and audio persistence: MELSPEC1 files, corpus directories, WAV ingestion.

MELSPEC1 layout (little-endian):
    magic "MELSPEC1" | u32 frames | u32 n_mels | u64 seed | float32[frames * n_mels]
"""
import json
import re
from pathlib import Path

import numpy as np
import soundfile as sf

from timbre_lab.audiofeat.corpus import Utterance, WaveSample, sample_id_for
from timbre_lab.audiofeat.features import MelSpectrogram, mel_from_config
from timbre_lab.binio import Reader, Writer, atomic_write_bytes, atomic_write_text
from timbre_lab.errors import InvalidArgumentError, MissingPrerequisiteError
from timbre_lab.logs import log_event, to_json_line

MEL_MAGIC = b"MELSPEC1"
MANIFEST_NAME = "manifest.jsonl"

WAV_SAMPLE_RATE = 16000
WAV_NAME = re.compile(r"spk(?P<speaker>\d+)-utt(?P<content>\d+)")


def encode_mel(mel):
    """Serialise a MelSpectrogram to MELSPEC1 bytes."""
    return (
        Writer(MEL_MAGIC)
        .u32(mel.frames, mel.n_mels)
        .u64(mel.seed)
        .floats(mel.values)
        .getvalue()
    )


def decode_mel(data, what="mel"):
    """Parse MELSPEC1 bytes; raises ArtifactFormatError on bad framing."""
    reader = Reader(data, MEL_MAGIC, what)
    frames, n_mels = reader.u32(2)
    seed = reader.u64()
    values = reader.floats((frames, n_mels))
    reader.finish()
    return MelSpectrogram(values=values, seed=seed)


def save_mel(path, mel):
    return atomic_write_bytes(path, encode_mel(mel))


def load_mel(path):
    path = Path(path)
    if not path.exists():
        raise MissingPrerequisiteError(path)
    return decode_mel(path.read_bytes(), what=str(path))


def write_corpus(directory, utterances):
    """
    Persist a corpus as one MELSPEC1 file per utterance plus a manifest.

    Args:
        directory: Corpus root; created if missing
        utterances (list[Utterance]): Labelled mels

    Returns:
        Path: The manifest path
    """
    root = Path(directory)
    lines = []
    for utt in utterances:
        relative = Path("mels") / f"{utt.sample_id}.mel"
        save_mel(root / relative, utt.mel)
        lines.append(
            to_json_line(
                {
                    "path": relative.as_posix(),
                    "speaker": utt.speaker,
                    "contentId": utt.content_id,
                    "sampleId": utt.sample_id,
                }
            )
        )
    manifest = atomic_write_text(root / MANIFEST_NAME, "\n".join(lines) + "\n")
    log_event("INFO", "Corpus written", directory=str(root), utterances=len(utterances))
    return manifest


def read_corpus(directory):
    """
    Load a corpus written by ``write_corpus``.

    Raises:
        MissingPrerequisiteError: If the manifest or a listed file is missing
    """
    root = Path(directory)
    manifest = root / MANIFEST_NAME
    if not manifest.exists():
        raise MissingPrerequisiteError(manifest, "run synth-data first")
    utterances = []
    for line in manifest.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        entry = json.loads(line)
        mel = load_mel(root / entry["path"])
        utterances.append(
            Utterance(
                sample_id=entry["sampleId"],
                speaker=int(entry["speaker"]),
                content_id=int(entry["contentId"]),
                mel=mel,
            )
        )
    return utterances


def load_wav(path, speaker=0, content_id=0):
    """
    Read a 16-bit PCM, mono, little-endian, 16 kHz WAV file.

    Args:
        path: WAV file path
        speaker (int): Label attached to the sample
        content_id (int): Content id attached to the sample

    Returns:
        WaveSample: Samples scaled to [-1, 1)

    Raises:
        InvalidArgumentError: If the file is not a WAV of exactly that format
    """
    path = Path(path)
    if not path.exists():
        raise MissingPrerequisiteError(path)
    try:
        info = sf.info(str(path))
    except RuntimeError as e:
        raise InvalidArgumentError(f"{path}: not a readable audio file ({e})") from e

    problems = []
    if info.format != "WAV":
        problems.append(f"container {info.format} (need WAV)")
    if info.subtype != "PCM_16":
        problems.append(f"encoding {info.subtype} (need PCM_16)")
    if info.channels != 1:
        problems.append(f"{info.channels} channels (need mono)")
    if info.samplerate != WAV_SAMPLE_RATE:
        problems.append(f"sample rate {info.samplerate} Hz (need {WAV_SAMPLE_RATE})")
    if info.endian not in ("FILE", "LITTLE"):
        problems.append(f"endianness {info.endian} (need little-endian)")
    if problems:
        raise InvalidArgumentError(f"{path}: unsupported WAV: " + ", ".join(problems))

    samples, sample_rate = sf.read(str(path), dtype="float64", always_2d=False)
    return WaveSample(
        samples=np.clip(samples, -1.0, 1.0),
        sample_rate=sample_rate,
        speaker=speaker,
        content_id=content_id,
    )


def corpus_from_wavs(directory, mel_cfg):
    """
    Build a corpus from recorded WAV files instead of the synthesizer.

    Files must be named like corpus sample ids (``spk03-utt012.wav``); the
    speaker and content id come from the name. Every file goes through
    ``load_wav``, so the same PCM_16 / mono / 16 kHz rules apply.

    Args:
        directory: Folder holding the WAV files (not searched recursively)
        mel_cfg (MelConfig): Feature settings

    Returns:
        list[Utterance]: Ordered by (speaker, content_id)

    Raises:
        MissingPrerequisiteError: If the folder does not exist
        InvalidArgumentError: On a badly named or unsupported file, or an
            empty folder
    """
    root = Path(directory)
    if not root.is_dir():
        raise MissingPrerequisiteError(root)
    utterances = []
    for path in sorted(root.glob("*.wav")):
        match = WAV_NAME.fullmatch(path.stem)
        if match is None:
            raise InvalidArgumentError(f"{path}: name must look like spkXX-uttYYY.wav")
        speaker, content_id = int(match["speaker"]), int(match["content"])
        mel = mel_from_config(load_wav(path, speaker=speaker, content_id=content_id), mel_cfg)
        utterances.append(
            Utterance(sample_id=sample_id_for(speaker, content_id), speaker=speaker, content_id=content_id, mel=mel)
        )
    if not utterances:
        raise InvalidArgumentError(f"{root}: no .wav files found")
    utterances.sort(key=lambda u: (u.speaker, u.content_id))
    log_event("INFO", "WAV corpus loaded", directory=str(root), utterances=len(utterances),
              speakers=len({u.speaker for u in utterances}))
    return utterances
