"""Spectral feature extraction producing a 60 Hz, 438-dimensional stream.

Frame layout (column ranges of an assembled frame)::

    0:20     MFCC
    20:40    MFCC delta
    40:52    chroma
    52:436   tempogram (lags 0..383)
    436      onset strength
    437      beat flag
"""

from __future__ import annotations

import numpy as np
import scipy.fft
from scipy.ndimage import median_filter

from .wav import Waveform, resample

SAMPLE_RATE = 24000
HOP = 400
FFT_SIZE = 2048
FRAME_RATE = 60.0
N_MELS = 128
N_MFCC = 20
N_CHROMA = 12
TEMPO_WINDOW = 384
LOG_FLOOR = 1e-10

FEATURE_SLICES = {
    "mfcc": slice(0, 20),
    "mfcc_delta": slice(20, 40),
    "chroma": slice(40, 52),
    "tempogram": slice(52, 436),
    "onset": slice(436, 437),
    "beat": slice(437, 438),
}
FEATURE_DIM = 438


def stft(w: Waveform, fft_size: int = FFT_SIZE, hop: int = HOP) -> np.ndarray:
    """Centered, Hann-windowed short-time Fourier transform.

    Returns a complex array of shape ``(ceil(len / hop), fft_size // 2 + 1)``;
    frame ``i`` is centred on sample ``i * hop`` of the reflect-padded signal.
    """
    if fft_size <= 0 or fft_size & (fft_size - 1):
        raise ValueError(f"fft_size must be a power of two, got {fft_size}")
    if not 0 < hop <= fft_size:
        raise ValueError(f"hop must satisfy 0 < hop <= fft_size, got {hop}")
    x = np.asarray(w.samples, dtype=np.float64)
    n = len(x)
    n_bins = fft_size // 2 + 1
    if n == 0:
        return np.zeros((0, n_bins), dtype=np.complex128)
    n_frames = -(-n // hop)
    half = fft_size // 2
    mode = "reflect" if n > 1 else "constant"
    padded = np.pad(x, (half, half), mode=mode)
    window = hann_window(fft_size)
    frames = np.lib.stride_tricks.sliding_window_view(padded, fft_size)[::hop][:n_frames]
    return np.fft.rfft(frames * window, axis=1)


def hann_window(size: int) -> np.ndarray:
    # periodic Hann, the usual choice for spectral analysis
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(size) / size)


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int = SAMPLE_RATE, fft_size: int = FFT_SIZE,
                   n_mels: int = N_MELS) -> np.ndarray:
    """Triangular mel filters spanning 0 .. sample_rate / 2, shape ``(n_mels, n_bins)``."""
    bin_freqs = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    edges = _mel_to_hz(np.linspace(0.0, _hz_to_mel(sample_rate / 2.0), n_mels + 2))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_freqs - lower) / (center - lower)
    falling = (upper - bin_freqs) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def _mel_log_energy(spec: np.ndarray, sample_rate: int) -> np.ndarray:
    mag = np.abs(spec)
    fft_size = 2 * (mag.shape[1] - 1)
    fb = mel_filterbank(sample_rate, fft_size)
    return np.log(np.maximum((mag ** 2) @ fb.T, LOG_FLOOR))


def mfcc(spec: np.ndarray, sample_rate: int = SAMPLE_RATE, n_mfcc: int = N_MFCC) -> np.ndarray:
    """Orthonormal DCT-II of the log mel energies, first ``n_mfcc`` coefficients per frame."""
    log_mel = _mel_log_energy(spec, sample_rate)
    if len(log_mel) == 0:
        return np.zeros((0, n_mfcc))
    return scipy.fft.dct(log_mel, type=2, norm="ortho", axis=1)[:, :n_mfcc]


def mfcc_delta(coeffs: np.ndarray) -> np.ndarray:
    """Centred first difference over an edge-replicated stream; a single frame yields zeros."""
    c = np.asarray(coeffs, dtype=np.float64)
    if len(c) < 2:
        return np.zeros_like(c)
    padded = np.concatenate([c[:1], c, c[-1:]], axis=0)
    return (padded[2:] - padded[:-2]) / 2.0


def chromagram(spec: np.ndarray, sample_rate: int = SAMPLE_RATE,
               fmin: float = 32.7) -> np.ndarray:
    """Pitch-class energy from a log-frequency folding of the STFT, max-normalised per frame.

    Each bin contributes to the pitch class of its nearest semitone, weighted by a
    triangle that is 1 on the semitone centre and falls to 0.5 half a semitone away.
    """
    power = np.abs(spec) ** 2
    n_bins = power.shape[1]
    freqs = np.arange(n_bins) * sample_rate / (2 * (n_bins - 1))
    usable = freqs >= fmin
    midi = np.zeros(n_bins)
    midi[usable] = 12.0 * np.log2(freqs[usable] / 440.0) + 69.0
    nearest = np.round(midi)
    weight = np.where(usable, 1.0 - np.abs(midi - nearest), 0.0)
    pitch_class = nearest.astype(int) % 12
    fold = np.zeros((n_bins, N_CHROMA))
    fold[np.arange(n_bins), pitch_class] = weight
    chroma = power @ fold
    peak = chroma.max(axis=1, keepdims=True) if len(chroma) else np.zeros((0, 1))
    return np.divide(chroma, peak, out=np.zeros_like(chroma), where=peak > 0)


def onset_strength(spec: np.ndarray, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Mean over mel bands of the half-wave-rectified log-energy rise; frame 0 is zero."""
    log_mel = _mel_log_energy(spec, sample_rate)
    out = np.zeros(len(log_mel))
    if len(log_mel) > 1:
        out[1:] = np.maximum(np.diff(log_mel, axis=0), 0.0).mean(axis=1)
    return out


def tempogram(onset: np.ndarray, window: int = TEMPO_WINDOW) -> np.ndarray:
    """Local autocorrelation of the mean-removed onset envelope.

    Frame ``t`` looks at onsets ``t - window // 2 .. t + window // 2 - 1`` (zero
    outside the song) under a Hann taper and reports lags ``0 .. window - 1``,
    divided by the lag-0 value. Windows with no energy give all zeros.
    """
    env = np.asarray(onset, dtype=np.float64)
    n = len(env)
    if n == 0:
        return np.zeros((0, window))
    if np.all(env == env[0]):
        centered = np.zeros(n)
    else:
        centered = env - env.mean()
    half = window // 2
    padded = np.pad(centered, (half, window - half))
    segments = np.lib.stride_tricks.sliding_window_view(padded, window)[:n]
    segments = segments * np.hanning(window)
    spectrum = np.fft.rfft(segments, n=2 * window, axis=1)
    ac = np.fft.irfft(np.abs(spectrum) ** 2, n=2 * window, axis=1)[:, :window]
    lag0 = ac[:, :1]
    nonzero = np.any(segments != 0, axis=1, keepdims=True)
    return np.divide(ac, lag0, out=np.zeros_like(ac), where=nonzero & (lag0 > 0))


def beat_flag(onset: np.ndarray, median_window: int = 61) -> np.ndarray:
    """1.0 at local maxima of the onset envelope that exceed its running median."""
    env = np.asarray(onset, dtype=np.float64)
    n = len(env)
    if n == 0:
        return np.zeros(0)
    baseline = median_filter(env, size=median_window, mode="reflect")
    left = np.concatenate([[-np.inf], env[:-1]])
    right = np.concatenate([env[1:], [-np.inf]])
    peaks = (env > left) & (env >= right) & (env > baseline)
    return peaks.astype(np.float64)


def _as_columns(values) -> np.ndarray:
    a = np.asarray(values, dtype=np.float64)
    return a[:, None] if a.ndim == 1 else a


def assemble_features(mfcc_values, delta_values, chroma_values, tempo_values,
                      onset_values, beat_values) -> np.ndarray:
    """Concatenate per-frame feature streams into a ``(T, 438)`` array."""
    parts = [_as_columns(v) for v in (mfcc_values, delta_values, chroma_values,
                                       tempo_values, onset_values, beat_values)]
    lengths = {len(p) for p in parts}
    if len(lengths) != 1:
        raise ValueError(f"feature streams have mismatched frame counts: {[len(p) for p in parts]}")
    widths = [p.shape[1] for p in parts]
    expected = [s.stop - s.start for s in FEATURE_SLICES.values()]
    if widths != expected:
        raise ValueError(f"feature widths {widths} do not match layout {expected}")
    return np.concatenate(parts, axis=1)


def frame_times(n_frames: int, frame_rate: float = FRAME_RATE) -> np.ndarray:
    return np.arange(n_frames) / frame_rate


def extract_features(w: Waveform) -> np.ndarray:
    """Full pipeline: resample to 24 kHz, STFT, per-feature extraction, assembly."""
    if w.sample_rate != SAMPLE_RATE:
        w = resample(w, SAMPLE_RATE)
    spec = stft(w, FFT_SIZE, HOP)
    coeffs = mfcc(spec)
    onset = onset_strength(spec)
    return assemble_features(
        coeffs,
        mfcc_delta(coeffs),
        chromagram(spec),
        tempogram(onset),
        onset,
        beat_flag(onset),
    )
