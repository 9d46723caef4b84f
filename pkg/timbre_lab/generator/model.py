"""
Conditional Mel Generator

Desk-scale stand-in for a voice-conversion decoder:

    x = [content code | speaker embedding]
    h = tanh(x W1 + b1)
    M_hat = clamp(h W2 + b2, -80, +10) reshaped to (frames, n_mels)
"""
from dataclasses import dataclass

import numpy as np

from timbre_lab.audiofeat import MEL_CEIL_DB, MEL_FLOOR_DB, MelSpectrogram
from timbre_lab.binio import as_float32_values
from timbre_lab.errors import InvalidArgumentError
from timbre_lab.numkernel import make_rng, tanh_backward

CONTENT_CODE_STREAM = 11


@dataclass
class ContentCode:
    """Frozen unit-norm vector standing in for speaker-independent linguistic content"""
    values: np.ndarray
    content_id: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or not np.all(np.isfinite(self.values)):
            raise InvalidArgumentError("content code must be a finite vector")


def make_content_code(content_id, dim, seed):
    """
    Deterministic random unit vector for a content id.

    Every speaker saying the same content gets the same code.
    """
    if dim < 1:
        raise InvalidArgumentError(f"content dim must be >= 1, got {dim}")
    v = make_rng(seed, CONTENT_CODE_STREAM, content_id).normal(size=dim)
    return ContentCode(values=v / np.linalg.norm(v), content_id=int(content_id))


@dataclass
class CondGenerator:
    n_speakers: int
    frames: int
    n_mels: int
    speaker_table: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @property
    def d_spk(self):
        return self.speaker_table.shape[1]

    @property
    def content_dim(self):
        return self.w1.shape[0] - self.d_spk

    @property
    def hidden(self):
        return self.w1.shape[1]

    def parameters(self):
        return [self.speaker_table, self.w1, self.b1, self.w2, self.b2]

    def copy(self):
        return CondGenerator(
            self.n_speakers, self.frames, self.n_mels,
            *[p.copy() for p in self.parameters()],
        )

    def quantize(self):
        """Round every parameter to float32 precision, in place."""
        self.speaker_table, self.w1, self.b1, self.w2, self.b2 = [
            as_float32_values(p) for p in self.parameters()
        ]
        return self


def init_generator(n_speakers, frames, n_mels, content_dim=16, d_spk=8, hidden=64, seed=0,
                   zero=False, output_bias=None):
    """
    Create a generator.

    Args:
        n_speakers (int): Rows of the speaker table
        frames, n_mels (int): Output mel shape
        content_dim, d_spk, hidden (int): Layer widths
        seed (int): Initialisation seed
        zero (bool): All-zero weights and embeddings (output = bias)
        output_bias: Optional (frames, n_mels) initial output, typically the
            mean training mel

    Returns:
        CondGenerator: Parameters rounded to float32 precision
    """
    if n_speakers < 1 or min(frames, n_mels, content_dim, d_spk, hidden) < 1:
        raise InvalidArgumentError("generator dimensions must be positive")
    out_dim = frames * n_mels
    if output_bias is None:
        b2 = np.zeros(out_dim)
    else:
        b2 = np.asarray(output_bias, dtype=np.float64)
        if b2.shape != (frames, n_mels):
            raise InvalidArgumentError(f"output_bias must have shape {(frames, n_mels)}, got {b2.shape}")
        b2 = b2.reshape(-1).copy()
    in_dim = content_dim + d_spk
    if zero:
        table, w1, w2 = np.zeros((n_speakers, d_spk)), np.zeros((in_dim, hidden)), np.zeros((hidden, out_dim))
    else:
        rng = make_rng(seed)
        table = rng.normal(0.0, 1.0, size=(n_speakers, d_spk))
        w1 = rng.normal(0.0, 1.0 / np.sqrt(in_dim), size=(in_dim, hidden))
        w2 = rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(hidden, out_dim))
    return CondGenerator(
        n_speakers=n_speakers,
        frames=frames,
        n_mels=n_mels,
        speaker_table=table,
        w1=w1,
        b1=np.zeros(hidden),
        w2=w2,
        b2=b2,
    ).quantize()


def _check_inputs(g, codes, speakers):
    for speaker in speakers:
        if not 0 <= int(speaker) < g.n_speakers:
            raise InvalidArgumentError(f"unknown speaker {speaker} (generator has {g.n_speakers})")
    for code in codes:
        if code.values.shape != (g.content_dim,):
            raise InvalidArgumentError(f"content code has dim {code.values.shape[0]}, expected {g.content_dim}")


def forward_batch(g, codes, speakers):
    """
    Batched generation.

    Returns:
        tuple: (outputs (batch, frames, n_mels), cache for ``backward_batch``)
    """
    _check_inputs(g, codes, speakers)
    speakers = np.asarray(speakers, dtype=np.int64)
    x = np.concatenate([np.stack([c.values for c in codes]), g.speaker_table[speakers]], axis=1)
    h = np.tanh(x @ g.w1 + g.b1)
    raw = h @ g.w2 + g.b2
    out = np.clip(raw, MEL_FLOOR_DB, MEL_CEIL_DB)
    return out.reshape(len(codes), g.frames, g.n_mels), (x, h, raw, speakers)


def backward_batch(g, cache, dout):
    """
    Parameter gradients for a batch given d loss / d outputs.

    The clamp passes a gradient where the raw value is in range, or where a
    descent step would move it back into range.

    Returns:
        list[np.ndarray]: Gradients in ``g.parameters()`` order
    """
    x, h, raw, speakers = cache
    draw = np.asarray(dout, dtype=np.float64).reshape(raw.shape)
    above = (raw > MEL_CEIL_DB) & (draw < 0)
    below = (raw < MEL_FLOOR_DB) & (draw > 0)
    draw = np.where(above | below, 0.0, draw)

    dw2 = h.T @ draw
    db2 = draw.sum(axis=0)
    da = tanh_backward(h, draw @ g.w2.T)
    dw1 = x.T @ da
    db1 = da.sum(axis=0)
    dx = da @ g.w1.T
    dtable = np.zeros_like(g.speaker_table)
    np.add.at(dtable, speakers, dx[:, g.content_dim:])
    return [dtable, dw1, db1, dw2, db2]


def generate(g, content, speaker):
    """
    M_hat for one (content, speaker) pair; deterministic and clamped to
    [-80, +10] dB.

    Raises:
        InvalidArgumentError: If the speaker is unknown to the generator
    """
    out, _ = forward_batch(g, [content], [speaker])
    return MelSpectrogram(values=out[0], meta={"speaker": int(speaker), "contentId": content.content_id})
