from .features import (
    FEATURE_DIM,
    FEATURE_SLICES,
    FRAME_RATE,
    assemble_features,
    beat_flag,
    chromagram,
    extract_features,
    frame_times,
    mfcc,
    mfcc_delta,
    onset_strength,
    stft,
    tempogram,
)
from .fileio import read_features, write_features
from .normalize import Normalizer, fit_normalizer, normalize
from .wav import Waveform, WavDecodeError, load_wav, resample, write_wav

__all__ = [
    "FEATURE_DIM",
    "FEATURE_SLICES",
    "FRAME_RATE",
    "Normalizer",
    "WavDecodeError",
    "Waveform",
    "assemble_features",
    "beat_flag",
    "chromagram",
    "extract_features",
    "fit_normalizer",
    "frame_times",
    "load_wav",
    "mfcc",
    "mfcc_delta",
    "normalize",
    "onset_strength",
    "read_features",
    "resample",
    "stft",
    "tempogram",
    "write_features",
    "write_wav",
]
