"""
SPKCLF01 classifier checkpoints.

Layout (little-endian):
    magic "SPKCLF01"
    u32 n_mels | u32 n_speakers | u32 pooling code | u32 n_layers
    n_layers x (u32 fan_in, u32 fan_out)
    float32 feature_mean[in_dim] | float32 feature_std[in_dim]
    per layer: float32 W[fan_in, fan_out] | float32 b[fan_out]
"""
from pathlib import Path

from timbre_lab.binio import Reader, Writer, atomic_write_bytes, sha256_bytes
from timbre_lab.errors import ArtifactFormatError, MissingPrerequisiteError
from timbre_lab.speakernet.model import POOLING_MODES, SpeakerClassifier, pooled_dim

CLASSIFIER_MAGIC = b"SPKCLF01"


def encode_classifier(c):
    writer = Writer(CLASSIFIER_MAGIC)
    writer.u32(c.n_mels, c.n_speakers, POOLING_MODES.index(c.pooling), len(c.weights))
    for w in c.weights:
        writer.u32(*w.shape)
    writer.floats(c.feature_mean).floats(c.feature_std)
    for w, b in zip(c.weights, c.biases):
        writer.floats(w).floats(b)
    return writer.getvalue()


def decode_classifier(data, what="classifier"):
    """
    Parse SPKCLF01 bytes.

    Raises:
        ArtifactFormatError: On bad magic, truncation or an inconsistent
            layer table
    """
    reader = Reader(data, CLASSIFIER_MAGIC, what)
    n_mels, n_speakers, pooling_code, n_layers = reader.u32(4)
    if pooling_code >= len(POOLING_MODES) or n_layers < 1:
        raise ArtifactFormatError(f"{what}: bad header (pooling {pooling_code}, layers {n_layers})")
    pooling = POOLING_MODES[pooling_code]
    shapes = [tuple(reader.u32(2)) for _ in range(n_layers)]
    in_dim = pooled_dim(n_mels, pooling)
    chained = all(shapes[k][1] == shapes[k + 1][0] for k in range(n_layers - 1))
    if shapes[0][0] != in_dim or shapes[-1][1] != n_speakers or not chained:
        raise ArtifactFormatError(f"{what}: layer table {shapes} does not match header")

    feature_mean = reader.floats((in_dim,))
    feature_std = reader.floats((in_dim,))
    weights, biases = [], []
    for fan_in, fan_out in shapes:
        weights.append(reader.floats((fan_in, fan_out)))
        biases.append(reader.floats((fan_out,)))
    reader.finish()
    return SpeakerClassifier(
        n_mels=n_mels,
        n_speakers=n_speakers,
        pooling=pooling,
        weights=weights,
        biases=biases,
        feature_mean=feature_mean,
        feature_std=feature_std,
    )


def save_classifier(path, c):
    return atomic_write_bytes(path, encode_classifier(c))


def load_classifier(path):
    path = Path(path)
    if not path.exists():
        raise MissingPrerequisiteError(path)
    return decode_classifier(path.read_bytes(), what=str(path))


def classifier_hash(c):
    """sha256 of the checkpoint encoding; equal hashes mean equal parameters."""
    return sha256_bytes(encode_classifier(c))
