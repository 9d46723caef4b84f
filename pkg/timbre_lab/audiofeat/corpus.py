"""
Synthetic Multi-speaker Corpus

Harmonic-series "voices": each speaker owns a fundamental frequency and a
spectral tilt, each content id owns a formant shared by every speaker. The
corpus is a pure function of its DatasetSpec.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from timbre_lab.audiofeat.features import MelConfig, mel_from_config
from timbre_lab.errors import InvalidArgumentError
from timbre_lab.numkernel import derive_seed, make_rng

F0_RANGE_HZ = (90.0, 300.0)
TILT_RANGE = (0.5, 2.0)
FORMANT_RANGE_HZ = (400.0, 3000.0)
FORMANT_BANDWIDTH_HZ = 300.0
PEAK_AMPLITUDE = 0.5

# RNG stream ids
VOICE_STREAM = 1
UTTERANCE_STREAM = 2
CONTENT_STREAM = 3


@dataclass(frozen=True)
class DatasetSpec:
    """Shape and seed of the synthetic corpus"""
    n_speakers: int = 10
    utterances_per_speaker: int = 20
    duration_s: float = 0.5
    seed: int = 0
    noise_floor: float = 0.01
    sample_rate: int = 16000
    n_harmonics: int = 8
    jitter: float = 0.02
    formant_gain: float = 1.5

    def validate(self):
        if self.n_speakers < 2:
            raise InvalidArgumentError(f"n_speakers must be >= 2, got {self.n_speakers}")
        if self.utterances_per_speaker < 1:
            raise InvalidArgumentError(
                f"utterances_per_speaker must be >= 1, got {self.utterances_per_speaker}"
            )
        if self.duration_s <= 0 or self.sample_rate <= 0:
            raise InvalidArgumentError("duration_s and sample_rate must be positive")
        if self.noise_floor < 0 or self.jitter < 0 or self.n_harmonics < 1:
            raise InvalidArgumentError("noise_floor and jitter must be >= 0, n_harmonics >= 1")


@dataclass
class WaveSample:
    """Mono waveform in [-1, 1] with its speaker label and content id"""
    samples: np.ndarray
    sample_rate: int
    speaker: int
    content_id: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise InvalidArgumentError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)) or np.any(np.abs(self.samples) > 1.0):
            raise InvalidArgumentError("samples must be finite and within [-1, 1]")


@dataclass(frozen=True)
class VoiceProfile:
    speaker: int
    f0: float
    tilt: float


@dataclass
class Utterance:
    """One labelled mel of the corpus"""
    sample_id: str
    speaker: int
    content_id: int
    mel: object


def sample_id_for(speaker, content_id):
    return f"spk{speaker:02d}-utt{content_id:03d}"


def _stratified(rng, low, high, n, log_scale=False):
    # One draw near the centre of each of n equal strata, then shuffled
    lo, hi = (np.log(low), np.log(high)) if log_scale else (low, high)
    width = (hi - lo) / n
    centres = lo + width * (np.arange(n) + 0.5)
    values = centres + rng.uniform(-0.25, 0.25, size=n) * width
    values = np.exp(values) if log_scale else values
    return values[rng.permutation(n)]


def speaker_voices(spec):
    """
    Per-speaker fundamental frequency and spectral tilt.

    F0 is log-uniform in 90-300 Hz and tilt uniform in 0.5-2.0, both
    stratified so that no two speakers share a value.

    Returns:
        list[VoiceProfile]: One profile per speaker, ordered by label
    """
    spec.validate()
    rng = make_rng(spec.seed, VOICE_STREAM)
    f0s = _stratified(rng, *F0_RANGE_HZ, spec.n_speakers, log_scale=True)
    tilts = _stratified(rng, *TILT_RANGE, spec.n_speakers)
    return [VoiceProfile(speaker=i, f0=float(f0s[i]), tilt=float(tilts[i])) for i in range(spec.n_speakers)]


def content_formant(seed, content_id):
    """Formant centre (Hz) carried by every utterance of a content id."""
    rng = make_rng(seed, CONTENT_STREAM, content_id)
    return float(rng.uniform(*FORMANT_RANGE_HZ))


def synth_utterance(spec, voice, content_id):
    """
    Render one utterance; its RNG derives from (seed, speaker, content_id).

    Returns:
        WaveSample
    """
    rng = make_rng(spec.seed, UTTERANCE_STREAM, voice.speaker, content_id)
    n = int(round(spec.duration_s * spec.sample_rate))
    t = np.arange(n) / spec.sample_rate
    f0 = voice.f0 * (1.0 + spec.jitter * rng.uniform(-1.0, 1.0))
    formant = content_formant(spec.seed, content_id)

    signal = np.zeros(n)
    for k in range(1, spec.n_harmonics + 1):
        freq = k * f0
        if freq >= spec.sample_rate / 2:
            break
        gain = 1.0 + spec.formant_gain * np.exp(-0.5 * ((freq - formant) / FORMANT_BANDWIDTH_HZ) ** 2)
        amplitude = k ** (-voice.tilt) * gain
        signal += amplitude * np.sin(2.0 * np.pi * freq * t + rng.uniform(0.0, 2.0 * np.pi))

    peak = np.max(np.abs(signal))
    if peak > 0:
        signal *= PEAK_AMPLITUDE / peak
    if spec.noise_floor > 0:
        signal += rng.normal(0.0, spec.noise_floor, size=n)
    return WaveSample(
        samples=np.clip(signal, -1.0, 1.0),
        sample_rate=spec.sample_rate,
        speaker=voice.speaker,
        content_id=content_id,
    )


def synth_dataset(spec, workers=1):
    """
    Synthesize the full corpus.

    Args:
        spec (DatasetSpec): Corpus shape and seed
        workers (int): Threads used to render utterances; output order is
            always (speaker, content_id)

    Returns:
        list[WaveSample]

    Raises:
        InvalidArgumentError: If n_speakers < 2 or other fields are invalid
    """
    spec.validate()
    voices = speaker_voices(spec)
    jobs = [(voice, c) for voice in voices for c in range(spec.utterances_per_speaker)]
    if workers <= 1:
        return [synth_utterance(spec, voice, c) for voice, c in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: synth_utterance(spec, *job), jobs))


def build_corpus(spec, mel_cfg=None, workers=1):
    """
    Synthesize the corpus and convert every utterance to a log-mel.

    Returns:
        list[Utterance]: Ordered by (speaker, content_id)
    """
    mel_cfg = mel_cfg or MelConfig(sample_rate=spec.sample_rate, fmax=spec.sample_rate / 2)
    utterances = []
    for wave in synth_dataset(spec, workers=workers):
        mel = mel_from_config(wave, mel_cfg)
        mel.seed = derive_seed(spec.seed, UTTERANCE_STREAM, wave.speaker, wave.content_id)
        utterances.append(
            Utterance(
                sample_id=sample_id_for(wave.speaker, wave.content_id),
                speaker=wave.speaker,
                content_id=wave.content_id,
                mel=mel,
            )
        )
    return utterances


def split_by_content(utterances, n_test_contents):
    """
    Hold out the highest content ids of every speaker.

    Args:
        utterances (list[Utterance]): Corpus
        n_test_contents (int): Content ids reserved for testing

    Returns:
        tuple: (train, test) lists
    """
    contents = sorted({u.content_id for u in utterances})
    if not 0 < n_test_contents < len(contents):
        raise InvalidArgumentError(
            f"n_test_contents must be in (0, {len(contents)}), got {n_test_contents}"
        )
    held_out = set(contents[-n_test_contents:])
    train = [u for u in utterances if u.content_id not in held_out]
    test = [u for u in utterances if u.content_id in held_out]
    return train, test
