"""Log-mel front end: 16 kHz PCM -> power STFT -> (SpecAugment) -> log-mel -> [0, 1]."""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000
WIN_LENGTH = 400  # 25 ms
HOP_LENGTH = 160  # 10 ms
N_FFT = WIN_LENGTH
N_LINEAR_BINS = N_FFT // 2 + 1
N_MELS = 64
LOG_EPS = 1e-6

LINEAR = "linear-power"
LOG_MEL = "log-mel"
SCALED = "scaled-log-mel"


class AudioFormatError(ValueError):
    pass


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate != SAMPLE_RATE:
            raise AudioFormatError(f"sample_rate must be {SAMPLE_RATE}, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("audio samples must be finite")


@dataclass
class Spectrogram:
    values: np.ndarray  # (bins, frames)
    domain: str

    @property
    def bins(self) -> int:
        return self.values.shape[0]

    @property
    def frames(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SpecAugmentPolicy:
    apply_rate: float = 0.5
    max_masks_per_axis: int = 2
    max_freq_bins: int = 64
    max_frames: int = 100


@dataclass(frozen=True)
class ScaleStats:
    min: float
    max: float


def n_frames(n_samples: int) -> int:
    return (n_samples - WIN_LENGTH) // HOP_LENGTH + 1


def stft_power(clip: AudioClip) -> Spectrogram:
    x = clip.samples
    if len(x) < WIN_LENGTH:
        raise ValueError(f"clip has {len(x)} samples, need at least one {WIN_LENGTH}-sample window")
    frames = np.lib.stride_tricks.sliding_window_view(x, WIN_LENGTH)[::HOP_LENGTH]
    window = np.hanning(WIN_LENGTH + 1)[:-1]  # periodic Hann
    spec = np.fft.rfft(frames * window, n=N_FFT, axis=-1)
    return Spectrogram((spec.real**2 + spec.imag**2).T, LINEAR)


def specaugment(spec: Spectrogram, policy: SpecAugmentPolicy, rng: np.random.Generator) -> Spectrogram:
    """Zero out up to ``max_masks_per_axis`` stripes per axis with prob ``apply_rate``.

    Draw order is fixed: apply coin, then time masks, then frequency masks.
    """
    if spec.domain != LINEAR:
        raise ValueError(f"SpecAugment runs on the linear-power spectrogram, got {spec.domain}")
    out = spec.values.copy()
    if rng.random() >= policy.apply_rate:
        return Spectrogram(out, LINEAR)
    bins, frames = out.shape
    for axis, limit, extent in ((1, policy.max_frames, frames), (0, policy.max_freq_bins, bins)):
        for _ in range(rng.integers(0, policy.max_masks_per_axis + 1)):
            width = int(rng.integers(0, min(limit, extent) + 1))
            start = int(rng.integers(0, extent - width + 1))
            if axis == 1:
                out[:, start:start + width] = 0.0
            else:
                out[start:start + width, :] = 0.0
    return Spectrogram(out, LINEAR)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT, sr: int = SAMPLE_RATE,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """HTK-scale triangular filters, shape (n_mels, n_fft // 2 + 1)."""
    fmax = sr / 2 if fmax is None else fmax
    freqs = np.linspace(0.0, sr / 2, n_fft // 2 + 1)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    lo, ctr, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (ctr - lo)
    falling = (hi - freqs) / (hi - ctr)
    return np.maximum(0.0, np.minimum(rising, falling))


def mel_log(spec: Spectrogram, n_mels: int = N_MELS) -> Spectrogram:
    if spec.domain != LINEAR:
        raise ValueError(f"mel_log needs a linear-power spectrogram, got {spec.domain}")
    if spec.bins != N_LINEAR_BINS:
        raise ValueError(f"expected {N_LINEAR_BINS} linear bins, got {spec.bins}")
    return Spectrogram(np.log(mel_filterbank(n_mels) @ spec.values + LOG_EPS), LOG_MEL)


def scale_minmax(spec: Spectrogram, stats: ScaleStats) -> Spectrogram:
    if spec.domain != LOG_MEL:
        raise ValueError(f"scale_minmax needs log-mel input, got {spec.domain}")
    if not stats.max > stats.min:
        raise ValueError(f"degenerate scaling stats: min={stats.min}, max={stats.max}")
    scaled = (spec.values - stats.min) / (stats.max - stats.min)
    return Spectrogram(np.clip(scaled, 0.0, 1.0), SCALED)


def fit_stats(log_mels) -> ScaleStats:
    """Global min/max over clean (un-augmented) training log-mels."""
    lo = min(float(s.values.min()) for s in log_mels)
    hi = max(float(s.values.max()) for s in log_mels)
    return ScaleStats(lo, hi)


def crop_or_pad(values: np.ndarray, frames: int, fill: float = 0.0) -> np.ndarray:
    if values.shape[1] >= frames:
        return values[:, :frames]
    pad = np.full((values.shape[0], frames - values.shape[1]), fill, dtype=values.dtype)
    return np.concatenate([values, pad], axis=1)


def extract(clip: AudioClip, stats: ScaleStats, frames: int, n_mels: int = N_MELS,
            policy: SpecAugmentPolicy | None = None, rng: np.random.Generator | None = None) -> np.ndarray:
    """Full pipeline to a (n_mels, frames) scaled grid; augmentation only if a policy is given."""
    spec = stft_power(clip)
    if policy is not None:
        spec = specaugment(spec, policy, rng)
    scaled = scale_minmax(mel_log(spec, n_mels), stats)
    return crop_or_pad(scaled.values, frames)


def read_wav(path) -> AudioClip:
    """Read a 16-bit PCM mono 16 kHz WAV; anything else is rejected by field name."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as w:
            if w.getnchannels() != 1:
                raise AudioFormatError(f"{path}: channels={w.getnchannels()}, expected 1 (mono)")
            if w.getsampwidth() != 2:
                raise AudioFormatError(
                    f"{path}: bits_per_sample={8 * w.getsampwidth()}, expected 16")
            if w.getframerate() != SAMPLE_RATE:
                raise AudioFormatError(
                    f"{path}: sample_rate={w.getframerate()}, expected {SAMPLE_RATE}")
            raw = w.readframes(w.getnframes())
    except wave.Error as exc:
        raise AudioFormatError(f"{path}: audio_format not PCM RIFF/WAVE ({exc})") from exc
    except EOFError as exc:
        raise AudioFormatError(f"{path}: truncated header") from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioClip(samples, SAMPLE_RATE)


def write_wav(path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE):
    pcm = np.clip(np.round(np.asarray(samples) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())
