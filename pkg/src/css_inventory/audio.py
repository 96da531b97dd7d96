"""Waveforms, STFT/iSTFT and time-frequency masking.

Everything downstream works on mono 16 kHz float64 signals. Signals at
any other rate are rejected rather than resampled.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Waveform:
    """Mono sampled signal. ``samples`` is stored as a read-only float64 copy."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError(f"expected mono samples, got shape {x.shape}")
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(
                f"sample rate {self.sample_rate} not supported (only {SAMPLE_RATE} Hz)"
            )
        if not np.all(np.isfinite(x)):
            raise ValueError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", _frozen(x))

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def energy(self) -> float:
        return float(np.dot(self.samples, self.samples))

    def rms(self) -> float:
        if len(self.samples) == 0:
            return 0.0
        return float(np.sqrt(np.mean(self.samples**2)))

    def slice(self, start: float, end: float) -> "Waveform":
        """Cut ``[start, end)`` given in seconds."""
        a = int(round(start * self.sample_rate))
        b = int(round(end * self.sample_rate))
        return Waveform(self.samples[a:b], self.sample_rate)

    def __add__(self, other: "Waveform") -> "Waveform":
        if len(other) != len(self):
            raise ValueError("length mismatch")
        return Waveform(self.samples + other.samples, self.sample_rate)

    def scaled(self, gain: float) -> "Waveform":
        return Waveform(self.samples * gain, self.sample_rate)

    @classmethod
    def zeros(cls, n: int) -> "Waveform":
        return cls(np.zeros(n))


@dataclass(frozen=True)
class StftConfig:
    fft_size: int = 512
    hop: int = 256

    def __post_init__(self):
        if self.fft_size <= 0 or self.fft_size & (self.fft_size - 1):
            raise ValueError("fft_size must be a power of two")
        if not 0 < self.hop <= self.fft_size:
            raise ValueError("hop must be in (0, fft_size]")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def window(self) -> np.ndarray:
        # periodic Hann: constant overlap-add at hop = fft_size / 2^k
        n = np.arange(self.fft_size)
        return 0.5 - 0.5 * np.cos(2 * np.pi * n / self.fft_size)

    def n_frames(self, n_samples: int) -> int:
        return (n_samples - self.fft_size) // self.hop + 1

    def energy_factor(self) -> float:
        """Average of ``sum_l w(n - l*hop)**2``; maps STFT energy to signal energy."""
        w = self.window
        return float(np.sum(w**2) / self.hop)


@dataclass(frozen=True)
class Spectrogram:
    bins: np.ndarray  # (L, F) complex
    config: StftConfig = field(default_factory=StftConfig)
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        b = np.asarray(self.bins, dtype=np.complex128)
        if b.ndim != 2 or b.shape[1] != self.config.n_bins:
            raise ValueError(
                f"spectrogram must be (L, {self.config.n_bins}), got {b.shape}"
            )
        object.__setattr__(self, "bins", _frozen(b))

    @property
    def shape(self):
        return self.bins.shape

    @property
    def n_samples(self) -> int:
        """Length of the waveform that ``istft`` will return."""
        return (self.shape[0] - 1) * self.config.hop + self.config.fft_size

    def __mul__(self, alpha):
        return Spectrogram(self.bins * alpha, self.config, self.sample_rate)

    __rmul__ = __mul__

    def __add__(self, other: "Spectrogram") -> "Spectrogram":
        return Spectrogram(self.bins + other.bins, self.config, self.sample_rate)


@dataclass(frozen=True)
class Mask:
    values: np.ndarray  # (L, F) real, in [0, 1]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("mask must be 2-D")
        if not np.all(np.isfinite(v)) or v.min(initial=0.0) < 0 or v.max(initial=0.0) > 1:
            raise ValueError("mask entries must lie in [0, 1]")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def shape(self):
        return self.values.shape


def stft(w: Waveform, config: StftConfig | None = None) -> Spectrogram:
    """Short-time Fourier transform without padding.

    Frames start at ``l * hop`` and the number of frames is
    ``floor((len - fft_size) / hop) + 1``.
    """
    config = config or StftConfig()
    x = w.samples
    n = config.fft_size
    if len(x) < n:
        raise ValueError(f"signal too short: {len(x)} samples < fft_size {n}")
    frames = np.lib.stride_tricks.sliding_window_view(x, n)[:: config.hop]
    bins = np.fft.rfft(frames * config.window, axis=1)
    return Spectrogram(bins, config, w.sample_rate)


def synthesis_weights(config: StftConfig, n_frames: int) -> np.ndarray:
    """Window-square overlap sum used to normalize the inverse transform."""
    w2 = config.window**2
    total = np.zeros((n_frames - 1) * config.hop + config.fft_size)
    for l in range(n_frames):
        total[l * config.hop : l * config.hop + config.fft_size] += w2
    return total


def edge_mask(config: StftConfig, n_frames: int) -> np.ndarray:
    """True where the overlap-add normalization is only partial (signal edges)."""
    total = synthesis_weights(config, n_frames)
    n = len(total)
    flags = np.zeros(n, dtype=bool)
    edge = min(config.fft_size - config.hop, n)
    flags[:edge] = True
    flags[n - edge :] = True
    return flags


def istft(s: Spectrogram) -> Waveform:
    """Weighted overlap-add inverse of :func:`stft`.

    Output length is ``(L - 1) * hop + fft_size``. Samples within
    ``fft_size - hop`` of either end are normalized by a partial window sum
    (see :func:`edge_mask`) and are not exact reconstructions.
    """
    cfg = s.config
    L = s.shape[0]
    frames = np.fft.irfft(s.bins, n=cfg.fft_size, axis=1) * cfg.window
    out = np.zeros((L - 1) * cfg.hop + cfg.fft_size)
    for l in range(L):
        out[l * cfg.hop : l * cfg.hop + cfg.fft_size] += frames[l]
    norm = synthesis_weights(cfg, L)
    good = norm > 1e-10
    out[good] /= norm[good]
    out[~good] = 0.0
    return Waveform(out, s.sample_rate)


def apply_mask(s: Spectrogram, m: Mask) -> Spectrogram:
    """Scale each complex bin by the mask value (mixture phase is kept)."""
    if s.shape != m.shape:
        raise ValueError(f"mask shape {m.shape} does not match spectrogram {s.shape}")
    return Spectrogram(s.bins * m.values, s.config, s.sample_rate)


# -- WAV I/O -----------------------------------------------------------------


def read_wav(path) -> Waveform:
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono audio")
        if f.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM")
        rate = f.getframerate()
        raw = f.readframes(f.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    return Waveform(pcm / 32768.0, rate)


def write_wav(path, w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(w.sample_rate)
        f.writeframes(pcm.tobytes())
