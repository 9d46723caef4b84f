"""
CONDGEN1 generator checkpoints.

Layout (little-endian):
    magic "CONDGEN1"
    u32 n_speakers | u32 d_spk | u32 content_dim | u32 hidden | u32 frames | u32 n_mels
    float32 speaker_table | W1 | b1 | W2 | b2 (row-major)
"""
from pathlib import Path

from timbre_lab.binio import Reader, Writer, atomic_write_bytes, sha256_bytes
from timbre_lab.errors import MissingPrerequisiteError
from timbre_lab.generator.model import CondGenerator

GENERATOR_MAGIC = b"CONDGEN1"


def encode_generator(g):
    writer = Writer(GENERATOR_MAGIC).u32(g.n_speakers, g.d_spk, g.content_dim, g.hidden, g.frames, g.n_mels)
    for param in g.parameters():
        writer.floats(param)
    return writer.getvalue()


def decode_generator(data, what="generator"):
    reader = Reader(data, GENERATOR_MAGIC, what)
    n_speakers, d_spk, content_dim, hidden, frames, n_mels = reader.u32(6)
    in_dim = content_dim + d_spk
    out_dim = frames * n_mels
    g = CondGenerator(
        n_speakers=n_speakers,
        frames=frames,
        n_mels=n_mels,
        speaker_table=reader.floats((n_speakers, d_spk)),
        w1=reader.floats((in_dim, hidden)),
        b1=reader.floats((hidden,)),
        w2=reader.floats((hidden, out_dim)),
        b2=reader.floats((out_dim,)),
    )
    reader.finish()
    return g


def save_generator(path, g):
    return atomic_write_bytes(path, encode_generator(g))


def load_generator(path):
    path = Path(path)
    if not path.exists():
        raise MissingPrerequisiteError(path)
    return decode_generator(path.read_bytes(), what=str(path))


def generator_hash(g):
    return sha256_bytes(encode_generator(g))
