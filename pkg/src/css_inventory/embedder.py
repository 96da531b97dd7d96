"""Frame-level speaker fingerprints, pooling and chunking.

The extractor is a deterministic 128-dimensional spectral fingerprint
computed on non-overlapping 40 ms frames (30 frames per 1.2 s chunk):

* 64 log mel-band energies (frame mean removed),
* 32 harmonic-comb correlations on a log-spaced F0 grid from 60 to 400 Hz,
* 16 spectral-shape statistics,
* 16 sub-frame modulation features.

Each dimension is standardized with fixed constants, the groups are
weighted, and every frame is scaled to unit length. Frames whose RMS is
below :data:`SILENCE_RMS` are flagged silent and left as zero rows.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .audio import SAMPLE_RATE, Waveform

EMBED_DIM = 128
FRAME_SAMPLES = 640  # 40 ms
FRAME_HOP_S = FRAME_SAMPLES / SAMPLE_RATE
CHUNK_SECONDS = 1.2
SILENCE_RMS = 1e-4
MEL_FLOOR = 1e-2

_NFFT = 2048
_N_MEL = 64
_N_COMB = 32
_N_SHAPE = 16
_N_MOD = 16
_GROUPS = (
    slice(0, _N_MEL),
    slice(_N_MEL, _N_MEL + _N_COMB),
    slice(_N_MEL + _N_COMB, _N_MEL + _N_COMB + _N_SHAPE),
    slice(_N_MEL + _N_COMB + _N_SHAPE, EMBED_DIM),
)
_GROUP_WEIGHTS = (1.0, 1.5, 0.5, 0.1)


@dataclass(frozen=True)
class Embedding:
    vector: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError("embedding must be a vector")
        n = np.linalg.norm(v)
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"embedding must be unit norm, got {n}")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "vector", v)

    @classmethod
    def normalized(cls, v) -> "Embedding":
        v = np.asarray(v, dtype=np.float64)
        n = np.linalg.norm(v)
        if n < 1e-12:
            raise ValueError("cannot normalize a zero vector")
        return cls(v / n)

    def cosine(self, other: "Embedding") -> float:
        return float(self.vector @ other.vector)


@dataclass(frozen=True)
class EmbeddingSequence:
    frames: np.ndarray  # (T, K); silent rows are zero
    silent: np.ndarray  # (T,) bool
    frame_hop: float = FRAME_HOP_S
    source_duration: float = 0.0

    def __len__(self):
        return self.frames.shape[0]

    @property
    def active(self) -> np.ndarray:
        return self.frames[~self.silent]


# -- feature extraction ------------------------------------------------------------


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10 ** (np.asarray(m) / 2595.0) - 1.0)


@lru_cache(maxsize=None)
def _mel_filterbank() -> np.ndarray:
    freqs = np.fft.rfftfreq(_NFFT, 1 / SAMPLE_RATE)
    edges = _mel_to_hz(np.linspace(_hz_to_mel(50.0), _hz_to_mel(7600.0), _N_MEL + 2))
    fb = np.zeros((_N_MEL, len(freqs)))
    for i in range(_N_MEL):
        lo, mid, hi = edges[i : i + 3]
        up = (freqs - lo) / (mid - lo)
        down = (hi - freqs) / (hi - mid)
        fb[i] = np.maximum(0.0, np.minimum(up, down))
    return fb


def f0_grid() -> np.ndarray:
    return np.geomspace(60.0, 400.0, _N_COMB)


@lru_cache(maxsize=None)
def _comb_basis() -> tuple:
    freqs = np.fft.rfftfreq(_NFFT, 1 / SAMPLE_RATE)
    band = (freqs >= 50.0) & (freqs <= 4000.0)
    basis = np.cos(2 * np.pi * freqs[band][None, :] / f0_grid()[:, None])
    return band, basis


def _shape_stats(power: np.ndarray, prev_power: np.ndarray) -> np.ndarray:
    freqs = np.fft.rfftfreq(_NFFT, 1 / SAMPLE_RATE)
    p = power + 1e-12
    total = p.sum(axis=1, keepdims=True)
    pn = p / total
    fk = freqs / (SAMPLE_RATE / 2)
    centroid = pn @ fk
    spread = np.sqrt(np.maximum(pn @ fk**2 - centroid**2, 0.0))
    d = fk[None, :] - centroid[:, None]
    sd = spread[:, None] + 1e-9
    skew = np.sum(pn * (d / sd) ** 3, axis=1)
    kurt = np.sum(pn * (d / sd) ** 4, axis=1)
    cum = np.cumsum(pn, axis=1)
    roll85 = fk[np.argmax(cum >= 0.85, axis=1)]
    roll50 = fk[np.argmax(cum >= 0.50, axis=1)]
    sel = (freqs >= 100) & (freqs <= 5000)
    lf = np.log2(freqs[sel])
    lf = lf - lf.mean()
    tilt = (10 * np.log10(p[:, sel])) @ lf / (lf @ lf)
    flatness = np.exp(np.mean(np.log(p), axis=1)) / np.mean(p, axis=1)
    entropy = -np.sum(pn * np.log(pn), axis=1) / np.log(p.shape[1])
    crest = np.log(np.max(p, axis=1) / np.mean(p, axis=1))
    prevn = (prev_power + 1e-12) / (prev_power + 1e-12).sum(axis=1, keepdims=True)
    flux = np.sqrt(np.sum((np.sqrt(pn) - np.sqrt(prevn)) ** 2, axis=1))
    bands = [(0, 500), (500, 1000), (1000, 2000), (2000, 4000), (4000, 8001)]
    ratios = [
        np.log10(p[:, (freqs >= lo) & (freqs < hi)].sum(axis=1) / total[:, 0]) for lo, hi in bands
    ]
    return np.column_stack(
        [centroid, spread, skew, kurt, roll85, roll50, tilt, flatness, entropy, crest, flux, *ratios]
    )


def _modulation(frames: np.ndarray) -> np.ndarray:
    """Log energy trajectory of 4 sub-frames in 4 bands, relative to the band mean."""
    L = frames.shape[0]
    sub = frames.reshape(L, 4, FRAME_SAMPLES // 4)
    spec = np.abs(np.fft.rfft(sub * np.hanning(FRAME_SAMPLES // 4), n=256, axis=2)) ** 2
    freqs = np.fft.rfftfreq(256, 1 / SAMPLE_RATE)
    edges = [(0, 500), (500, 1500), (1500, 3500), (3500, 8001)]
    e = np.stack(
        [spec[:, :, (freqs >= lo) & (freqs < hi)].sum(axis=2) for lo, hi in edges], axis=2
    )
    le = np.log(e + 1e-10)
    le = le - le.mean(axis=1, keepdims=True)
    return le.reshape(L, 16)


def raw_features(x: np.ndarray) -> tuple:
    """Unstandardized (T, 128) features and a silence flag per 40 ms frame."""
    T = len(x) // FRAME_SAMPLES
    frames = np.asarray(x[: T * FRAME_SAMPLES], dtype=np.float64).reshape(T, FRAME_SAMPLES)
    silent = np.sqrt(np.mean(frames**2, axis=1)) < SILENCE_RMS
    spec = np.fft.rfft(frames * np.hanning(FRAME_SAMPLES), n=_NFFT, axis=1)
    power = np.abs(spec) ** 2
    mel_e = power @ _mel_filterbank().T
    # floor each frame's dynamic range so the noise floor reads as a constant
    mel = np.log(mel_e + MEL_FLOOR * mel_e.max(axis=1, keepdims=True) + 1e-10)
    mel = mel - mel.mean(axis=1, keepdims=True)
    band, basis = _comb_basis()
    comp = np.sqrt(np.abs(spec[:, band]))
    comp = comp - comp.mean(axis=1, keepdims=True)
    comb = comp @ basis.T / (np.linalg.norm(comp, axis=1, keepdims=True) * np.sqrt(band.sum()) + 1e-12)
    prev = np.vstack([np.zeros((1, power.shape[1])), power[:-1]])
    shape = _shape_stats(power, prev)
    mod = _modulation(frames)
    feats = np.hstack([mel, comb, shape, mod])
    return feats, silent


# Per-dimension centring and scaling constants. ``None`` until set by
# ``fit_standardization`` or loaded from package data.
_STATS_FILE = Path(__file__).with_name("embedder_stats.npz")


@lru_cache(maxsize=1)
def standardization() -> tuple:
    if _STATS_FILE.exists():
        d = np.load(_STATS_FILE)
        return d["mean"], d["scale"]
    return np.zeros(EMBED_DIM), np.ones(EMBED_DIM)


def fit_standardization(waveforms) -> tuple:
    """Per-dimension mean and scale of raw features over non-silent frames."""
    rows = []
    for w in waveforms:
        f, s = raw_features(w.samples)
        rows.append(f[~s])
    allf = np.vstack(rows)
    return allf.mean(axis=0), allf.std(axis=0) + 1e-6


def _finish(feats: np.ndarray, silent: np.ndarray) -> np.ndarray:
    mean, scale = standardization()
    z = (feats - mean) / scale
    for g, wgt in zip(_GROUPS, _GROUP_WEIGHTS):
        z[:, g] *= wgt / np.sqrt(g.stop - g.start)
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    z = np.where(norms > 0, z / np.maximum(norms, 1e-300), 0.0)
    z[silent] = 0.0
    return z


def embed_frames(w: Waveform) -> EmbeddingSequence:
    if w.sample_rate != SAMPLE_RATE:
        raise ValueError("embedder expects 16 kHz audio")
    if len(w) < FRAME_SAMPLES:
        raise ValueError(f"signal too short for one {FRAME_SAMPLES}-sample frame")
    feats, silent = raw_features(w.samples)
    return EmbeddingSequence(_finish(feats, silent), silent, FRAME_HOP_S, w.duration)


def mean_pool(seq: EmbeddingSequence) -> Embedding:
    """Average of the non-silent frames, rescaled to unit length."""
    active = seq.active
    if active.shape[0] == 0:
        raise ValueError("no speech content")
    m = active.mean(axis=0)
    if np.linalg.norm(m) < 1e-9:
        raise ValueError("no speech content: frame embeddings cancel out")
    return Embedding.normalized(m)


@dataclass(frozen=True)
class ChunkEmbeddings:
    indices: list  # chunk index of each row
    embeddings: list  # Embedding per non-silent chunk
    silent_indices: list
    chunk_seconds: float = CHUNK_SECONDS

    def __iter__(self):
        return iter(zip(self.indices, self.embeddings))

    def __len__(self):
        return len(self.indices)

    def matrix(self) -> np.ndarray:
        if not self.embeddings:
            return np.zeros((0, EMBED_DIM))
        return np.vstack([e.vector for e in self.embeddings])


def chunk_embeddings(w: Waveform, chunk: float = CHUNK_SECONDS) -> ChunkEmbeddings:
    """Pooled embedding for each non-overlapping chunk; silent chunks are listed apart."""
    per = int(round(chunk / FRAME_HOP_S))
    seq = embed_frames(w)
    n_chunks = len(seq) // per
    idx, embs, silent = [], [], []
    for b in range(n_chunks):
        sub = EmbeddingSequence(seq.frames[b * per : (b + 1) * per],
                                seq.silent[b * per : (b + 1) * per], seq.frame_hop, chunk)
        try:
            embs.append(mean_pool(sub))
            idx.append(b)
        except ValueError:
            silent.append(b)
    return ChunkEmbeddings(idx, embs, silent, chunk)


# -- EMB1 files ---------------------------------------------------------------------

EMB_MAGIC = b"EMB1"


def write_matrix(path, matrix: np.ndarray, magic: bytes = EMB_MAGIC, sidecar: dict | None = None):
    """Little-endian ``magic, u32 rows, u32 cols`` header followed by float32 rows."""
    m = np.ascontiguousarray(matrix, dtype="<f4")
    if m.ndim != 2:
        raise ValueError("matrix must be 2-D")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<II", *m.shape))
        f.write(m.tobytes())
    if sidecar is not None:
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1, sort_keys=True))


def read_matrix(path, magic: bytes = EMB_MAGIC) -> tuple:
    """Returns ``(matrix float64, sidecar dict or None)``."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != magic:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}, expected {magic!r}")
    rows, cols = struct.unpack("<II", raw[4:12])
    body = np.frombuffer(raw[12:], dtype="<f4")
    if body.size != rows * cols:
        raise ValueError(f"{path}: expected {rows}x{cols} floats, found {body.size}")
    side = path.with_suffix(".json")
    meta = json.loads(side.read_text()) if side.exists() else None
    return body.reshape(rows, cols).astype(np.float64), meta


def write_chunk_embeddings(path, ce: ChunkEmbeddings, extra: dict | None = None):
    sidecar = dict(extra or {})
    sidecar.update({
        "chunk_seconds": ce.chunk_seconds,
        "rows": [
            {"chunk": b, "start_s": round(b * ce.chunk_seconds, 6),
             "end_s": round((b + 1) * ce.chunk_seconds, 6)}
            for b in ce.indices
        ],
        "silent_chunks": list(ce.silent_indices),
    })
    write_matrix(path, ce.matrix(), EMB_MAGIC, sidecar)


def read_chunk_embeddings(path) -> ChunkEmbeddings:
    """Load externally computed chunk embeddings (rows re-normalized)."""
    m, side = read_matrix(path, EMB_MAGIC)
    side = side or {}
    rows = side.get("rows") or [{"chunk": i} for i in range(m.shape[0])]
    return ChunkEmbeddings(
        [int(r["chunk"]) for r in rows],
        [Embedding.normalized(v) for v in m],
        list(side.get("silent_chunks", [])),
        float(side.get("chunk_seconds", CHUNK_SECONDS)),
    )
