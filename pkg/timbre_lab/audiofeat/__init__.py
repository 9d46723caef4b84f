from timbre_lab.audiofeat.corpus import (
    DatasetSpec,
    Utterance,
    VoiceProfile,
    WaveSample,
    build_corpus,
    content_formant,
    sample_id_for,
    speaker_voices,
    split_by_content,
    synth_dataset,
)
from timbre_lab.audiofeat.features import (
    MEL_CEIL_DB,
    MEL_FLOOR_DB,
    MelConfig,
    MelSpectrogram,
    add_gaussian_noise,
    mel_center_frequencies,
    mel_filterbank,
    mel_from_config,
    mel_spectrogram,
)
from timbre_lab.audiofeat.melio import (
    corpus_from_wavs,
    decode_mel,
    encode_mel,
    load_mel,
    load_wav,
    read_corpus,
    save_mel,
    write_corpus,
)
