"""Log-mel features and SpecAugment-style masking."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SAMPLE_RATE = 16000
LOG_FLOOR = 1e-10


@dataclass
class MelSpectrogram:
    """T x M matrix of log-mel energies (frames by mel bins)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise ValueError(f"spectrogram must be a non-empty T x M matrix, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("spectrogram contains non-finite values")

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def bins(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other):
        return isinstance(other, MelSpectrogram) and np.array_equal(self.values, other.values)


@dataclass(frozen=True)
class AugmentPolicy:
    max_time_mask_width: int = 10
    n_time_masks: int = 2
    max_freq_mask_width: int = 8
    n_freq_masks: int = 2
    mask_value: float = 0.0

    def validate(self, frames: int, bins: int) -> None:
        if min(self.max_time_mask_width, self.n_time_masks,
               self.max_freq_mask_width, self.n_freq_masks) < 0:
            raise ValueError("mask widths and counts must be non-negative")
        if self.n_time_masks and self.max_time_mask_width >= frames:
            raise ValueError(
                f"max_time_mask_width {self.max_time_mask_width} must be < frames {frames}")
        if self.n_freq_masks and self.max_freq_mask_width >= bins:
            raise ValueError(
                f"max_freq_mask_width {self.max_freq_mask_width} must be < bins {bins}")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_centers(n_mels: int, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Center frequency (Hz) of each triangular filter."""
    pts = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_mels + 2))
    return pts[1:-1]


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Triangular HTK-mel filters, shape n_mels x (n_fft // 2 + 1)."""
    pts = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_mels + 2))
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    lo, mid, hi = pts[:-2, None], pts[1:-1, None], pts[2:, None]
    up = (freqs[None, :] - lo) / (mid - lo)
    down = (hi - freqs[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down))


def frame_count(n_samples: int, frame_len: int, hop: int) -> int:
    return 1 + (n_samples - frame_len) // hop


def mel_spectrogram(waveform, n_mels: int = 80, frame_len: int = 400, hop: int = 160,
                    sample_rate: int = SAMPLE_RATE) -> MelSpectrogram:
    """Log of a triangular mel filterbank applied to Hann-windowed magnitude spectra."""
    x = np.asarray(waveform, dtype=np.float64)
    if n_mels < 1:
        raise ValueError("n_mels must be >= 1")
    if x.ndim != 1 or len(x) < frame_len:
        raise ValueError(f"waveform of {len(x)} samples is shorter than one frame ({frame_len})")
    n_frames = frame_count(len(x), frame_len, hop)
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx] * np.hanning(frame_len)[None, :]
    n_fft = 1 << (frame_len - 1).bit_length()
    mag = np.abs(np.fft.rfft(frames, n=n_fft, axis=1))
    energies = mag @ mel_filterbank(n_mels, n_fft, sample_rate).T
    return MelSpectrogram(np.log(np.maximum(energies, LOG_FLOOR)))


def normalize_utterance(spec: MelSpectrogram, eps: float = 1e-8) -> MelSpectrogram:
    """Zero mean, unit variance over all entries of one utterance.

    A single scalar mean/std is used, so per-bin structure (including any
    constant spectral tilt) survives normalization.
    """
    v = spec.values
    return MelSpectrogram((v - v.mean()) / max(v.std(), eps))


def draw_masks(frames: int, bins: int, policy: AugmentPolicy, rng: np.random.Generator):
    """Sample (start, width) pairs for the time masks and the frequency masks."""
    policy.validate(frames, bins)
    time_masks, freq_masks = [], []
    for _ in range(policy.n_time_masks):
        w = int(rng.integers(0, policy.max_time_mask_width + 1))
        time_masks.append((int(rng.integers(0, frames - w + 1)), w))
    for _ in range(policy.n_freq_masks):
        w = int(rng.integers(0, policy.max_freq_mask_width + 1))
        freq_masks.append((int(rng.integers(0, bins - w + 1)), w))
    return time_masks, freq_masks


def spec_augment(spec: MelSpectrogram, policy: AugmentPolicy,
                 rng: np.random.Generator) -> MelSpectrogram:
    time_masks, freq_masks = draw_masks(spec.frames, spec.bins, policy, rng)
    out = spec.values.copy()
    for t0, w in time_masks:
        out[t0:t0 + w, :] = policy.mask_value
    for f0, w in freq_masks:
        out[:, f0:f0 + w] = policy.mask_value
    return MelSpectrogram(out)
