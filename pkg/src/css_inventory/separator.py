"""Profile-biased two-output separation of a short segment.

``adapt_features`` is the multiplicative speaker adaptation used by a
learned separator: each frame of a feature matrix is multiplied
element-wise by the two selected profiles and the two products are
concatenated. No learned separation layer ships with this package; masks
come from one of two non-learned backends instead:

* :class:`OracleIRM` builds ideal ratio masks from ground-truth references,
* :class:`Affinity` routes each 40 ms frame between the two outputs by its
  similarity to the selected profiles.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import Mask, Spectrogram, StftConfig, Waveform, apply_mask, istft, stft
from .embedder import FRAME_SAMPLES, embed_frames
from .selector import SelectedProfiles

AFFINITY_TEMPERATURE = 10.0
SILENCE_LOGIT = 0.0
MASK_MAGIC = b"MSK1"


def adapt_features(b: np.ndarray, e_p1, e_p2) -> np.ndarray:
    """``concat([b * e_p1, b * e_p2])`` frame by frame; (L, K) -> (L, 2K)."""
    b = np.asarray(b, dtype=np.float64)
    e1 = np.asarray(getattr(e_p1, "vector", e_p1), dtype=np.float64)
    e2 = np.asarray(getattr(e_p2, "vector", e_p2), dtype=np.float64)
    if b.ndim != 2:
        raise ValueError("feature matrix must be (L, K)")
    if e1.shape != (b.shape[1],) or e2.shape != (b.shape[1],):
        raise ValueError(
            f"profile dimension {e1.shape}/{e2.shape} does not match feature width {b.shape[1]}"
        )
    if not np.all(np.isfinite(b)):
        raise ValueError("feature matrix must be finite")
    return np.hstack([b * e1, b * e2])


def oracle_irm_masks(s1: Spectrogram, s2: Spectrogram, floor: float = 1e-8,
                     interference: Spectrogram | None = None) -> tuple:
    """Ideal ratio masks ``|S_i| / (|S_1| + |S_2| + |N| + floor)``.

    ``interference`` (noise and any other talkers) is optional; without it
    the two masks sum to ``1 - O(floor)``.
    """
    if s1.shape != s2.shape:
        raise ValueError(f"reference shapes differ: {s1.shape} vs {s2.shape}")
    a1, a2 = np.abs(s1.bins), np.abs(s2.bins)
    den = a1 + a2 + floor
    if interference is not None:
        if interference.shape != s1.shape:
            raise ValueError("interference shape differs from references")
        den = den + np.abs(interference.bins)
    return Mask(a1 / den), Mask(a2 / den)


def _frame_weights(seq, e1: np.ndarray, e2: np.ndarray, temperature: float) -> np.ndarray:
    logits = np.column_stack([
        temperature * (seq.frames @ e1),
        temperature * (seq.frames @ e2),
        np.full(len(seq), SILENCE_LOGIT),
    ])
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    return p[:, :2]


def affinity_masks(segment: Waveform, profiles: SelectedProfiles,
                   config: StftConfig | None = None,
                   temperature: float = AFFINITY_TEMPERATURE) -> tuple:
    """Frame-level soft routing between the two selected profiles.

    Each 40 ms embedding frame gets a softmax over
    ``(T * e.e_p1, T * e.e_p2, silence)``; the first two weights are linearly
    interpolated onto STFT frame centres and broadcast over frequency.
    """
    config = config or StftConfig()
    if profiles.p1_index == profiles.p2_index:
        raise ValueError("affinity masks need two distinct profiles")
    L = config.n_frames(len(segment))
    seq = embed_frames(segment)
    w = _frame_weights(seq, profiles.e_p1.vector, profiles.e_p2.vector, temperature)
    emb_centres = (np.arange(len(seq)) + 0.5) * FRAME_SAMPLES
    stft_centres = np.arange(L) * config.hop + config.fft_size / 2
    m1 = np.interp(stft_centres, emb_centres, w[:, 0])
    m2 = np.interp(stft_centres, emb_centres, w[:, 1])
    F = config.n_bins
    return Mask(np.repeat(m1[:, None], F, axis=1)), Mask(np.repeat(m2[:, None], F, axis=1))


@dataclass(frozen=True)
class OracleIRM:
    """Ground-truth references for one segment, aligned with the segment samples."""

    references: tuple  # two Waveforms
    interference: Waveform | None = None
    floor: float = 1e-8


@dataclass(frozen=True)
class Affinity:
    temperature: float = AFFINITY_TEMPERATURE


@dataclass(frozen=True)
class SeparationResult:
    outputs: tuple  # two Waveforms
    masks: tuple  # two Masks
    profiles_used: SelectedProfiles | None = None


def _pad(x: np.ndarray, n: int) -> np.ndarray:
    return np.pad(x, (0, n - len(x))) if len(x) < n else x


def _padding(n: int, config: StftConfig) -> tuple:
    # a whole number of hops plus one frame on each side, so edges are exact
    body = max(n, config.fft_size)
    padded_len = ((body + config.hop - 1) // config.hop) * config.hop + 2 * config.fft_size
    return config.fft_size, padded_len


def _padded(w: Waveform, lead: int, padded_len: int) -> Waveform:
    x = np.zeros(padded_len)
    x[lead : lead + len(w)] = w.samples
    return Waveform(x)


def zero_masks(n: int, config: StftConfig | None = None) -> tuple:
    """Two all-zero masks shaped for a segment of ``n`` samples."""
    config = config or StftConfig()
    _, padded_len = _padding(n, config)
    Z = Mask(np.zeros((config.n_frames(padded_len), config.n_bins)))
    return Z, Z


def apply_masks(segment: Waveform, masks: tuple, config: StftConfig | None = None) -> tuple:
    """Resynthesize ``segment`` through each mask; outputs have the segment's length.

    Masks must have the padded-STFT shape produced by :func:`separate_segment`.
    Masking is linear in the signal, so the outputs for a sum of signals are
    the sums of their outputs.
    """
    config = config or StftConfig()
    n = len(segment)
    lead, padded_len = _padding(n, config)
    S = stft(_padded(segment, lead, padded_len), config)
    outs = []
    for m in masks:
        y = istft(apply_mask(S, m)).samples
        outs.append(Waveform(_pad(y, padded_len)[lead : lead + n]))
    return tuple(outs)


def separate_segment(segment: Waveform, profiles: SelectedProfiles | None, backend,
                     config: StftConfig | None = None) -> SeparationResult:
    """Mask the segment's STFT twice and resynthesize two outputs.

    The segment is zero-padded so the STFT covers every sample, and outputs
    are trimmed back to the input length. Output order is ``(p1, p2)`` for
    :class:`Affinity` and reference order for :class:`OracleIRM`.
    """
    config = config or StftConfig()
    lead, padded_len = _padding(len(segment), config)
    padded = lambda w: _padded(w, lead, padded_len)
    if isinstance(backend, OracleIRM):
        if backend.references is None or len(backend.references) != 2:
            raise ValueError("oracle masks need two ground-truth references")
        r1, r2 = (stft(padded(r), config) for r in backend.references)
        interf = stft(padded(backend.interference), config) if backend.interference is not None else None
        m1, m2 = oracle_irm_masks(r1, r2, backend.floor, interf)
    elif isinstance(backend, Affinity):
        if profiles is None:
            raise ValueError("affinity backend needs selected profiles")
        if len(segment) < FRAME_SAMPLES:
            m1, m2 = zero_masks(len(segment), config)
        else:
            m1, m2 = affinity_masks(padded(segment), profiles, config, backend.temperature)
    else:
        raise TypeError(f"unknown separation backend {backend!r}")
    return SeparationResult(apply_masks(segment, (m1, m2), config), (m1, m2), profiles)


def write_mask(path, m: Mask):
    v = np.ascontiguousarray(m.values, dtype="<f4")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MASK_MAGIC)
        f.write(struct.pack("<II", *v.shape))
        f.write(v.tobytes())


def read_mask(path) -> Mask:
    raw = Path(path).read_bytes()
    if raw[:4] != MASK_MAGIC:
        raise ValueError(f"{path}: not a MSK1 file")
    L, F = struct.unpack("<II", raw[4:12])
    return Mask(np.frombuffer(raw[12:], dtype="<f4").reshape(L, F).astype(np.float64).clip(0, 1))
