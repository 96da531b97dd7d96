"""Continuous separation of a long recording with a speaker inventory.

The recording is cut into overlapping windows (4 s, hop 3 s). Each window
selects two profiles from the inventory, is separated into two outputs,
and is then stitched to its predecessor: the output permutation whose
overlapping halves correlate best wins. Overlaps are cross-faded linearly
into two continuous streams.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .audio import SAMPLE_RATE, StftConfig, Waveform, stft
from .embedder import FRAME_SAMPLES, chunk_embeddings, embed_frames
from .inventory import SpeakerInventory, build_inventory_self
from .selector import select
from .separator import (
    Affinity,
    OracleIRM,
    SeparationResult,
    apply_masks,
    separate_segment,
    zero_masks,
)

log = logging.getLogger(__name__)

IDENTITY = (0, 1)
SWAP = (1, 0)
STITCH_SILENCE_RMS = 1e-4


@dataclass(frozen=True)
class SegmentPlan:
    window: float
    hop: float
    bounds: tuple  # (start_sample, end_sample) per segment
    sample_rate: int = SAMPLE_RATE

    @property
    def segments(self) -> list:
        return [(a / self.sample_rate, b / self.sample_rate) for a, b in self.bounds]

    def __len__(self):
        return len(self.bounds)


def plan_segments(duration: float, window: float = 4.0, hop: float = 3.0,
                  sample_rate: int = SAMPLE_RATE) -> SegmentPlan:
    """Uniform windows starting at ``0, hop, 2*hop, ...``; the last one ends at ``duration``.

    Recordings no longer than one window give a single segment.
    """
    if not 0 < hop < window:
        raise ValueError("need 0 < hop < window")
    n = int(round(duration * sample_rate))
    W = int(round(window * sample_rate))
    H = int(round(hop * sample_rate))
    if n <= W:
        return SegmentPlan(window, hop, ((0, n),), sample_rate)
    bounds = []
    start = 0
    while start + W <= n:
        bounds.append((start, start + W))
        start += H
    if bounds[-1][1] < n:
        bounds.append((n - W, n))
    return SegmentPlan(window, hop, tuple(bounds), sample_rate)


def crossfade(n: int) -> tuple:
    """Linear ``(fade_out, fade_in)`` weights over ``n`` samples; they sum to one."""
    fade_in = (np.arange(n) + 0.5) / n
    return 1.0 - fade_in, fade_in


def _ncc(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b / (na * nb))


def _spec_similarity(a: np.ndarray, b: np.ndarray) -> float:
    cfg = StftConfig()
    if len(a) < cfg.fft_size:
        return _ncc(a, b)
    A = np.abs(stft(Waveform(a), cfg).bins)
    B = np.abs(stft(Waveform(b), cfg).bins)
    A /= np.linalg.norm(A) + 1e-12
    B /= np.linalg.norm(B) + 1e-12
    return -float(np.mean((A - B) ** 2))


SIMILARITIES = {"ncc": _ncc, "spec_mse": _spec_similarity}


def stitch_pair(prev_out, next_out, overlap, similarity: str = "ncc",
                silence_rms: float = STITCH_SILENCE_RMS) -> tuple:
    """Permutation of ``next_out`` that best continues ``prev_out``.

    ``overlap`` is the shared span in samples (int) or seconds (float). The
    tail of each previous output is compared with the head of each next
    output; ``SWAP`` is returned only when it scores strictly higher than
    ``IDENTITY``. If either side is silent on the overlap the identity is
    kept.
    """
    n = overlap if isinstance(overlap, (int, np.integer)) else int(round(overlap * SAMPLE_RATE))
    if n <= 0:
        raise ValueError("overlap must be positive")
    p = [np.asarray(getattr(w, "samples", w))[-n:] for w in prev_out]
    q = [np.asarray(getattr(w, "samples", w))[:n] for w in next_out]
    rms = lambda x: float(np.sqrt(np.mean(x**2))) if len(x) else 0.0
    if max(rms(p[0]), rms(p[1])) < silence_rms or max(rms(q[0]), rms(q[1])) < silence_rms:
        return IDENTITY
    sim = SIMILARITIES[similarity]
    ident = sim(p[0], q[0]) + sim(p[1], q[1])
    swap = sim(p[0], q[1]) + sim(p[1], q[0])
    return SWAP if swap > ident else IDENTITY


def compose(perm: tuple, decision: tuple) -> tuple:
    """Stream ``s`` took raw channel ``perm[s]``; the next segment's continuation is ``decision[perm[s]]``."""
    return (decision[perm[0]], decision[perm[1]])


def oracle_channel_refs(recording, start: float, end: float) -> tuple:
    """Split the speakers active in ``[start, end)`` over two reference channels.

    Speakers are taken in order of first activity and placed on the channel
    where they overlap least in time with speakers already there, so that
    concurrent talkers end up on different channels. Ties go to the channel
    with fewer speakers, then to channel ``speaker_id % 2``; two speakers
    therefore always keep one channel each. Returns
    ``(ref0, ref1, speakers0, speakers1)``.
    """
    sr = recording.mixture.sample_rate
    a, b = int(round(start * sr)), int(round(end * sr))
    spans = {}
    for ev in recording.script.events:
        lo, hi = max(ev.onset, start), min(ev.offset, end)
        if hi > lo:
            spans.setdefault(ev.speaker_id, []).append((lo, hi))
    order = sorted(spans, key=lambda s: (min(x for x, _ in spans[s]), s))
    channels = ([], [])

    def clash(s, others):
        return sum(
            max(0.0, min(h1, h2) - max(l1, l2))
            for o in others for l1, h1 in spans[s] for l2, h2 in spans[o]
        )

    for s in order:
        key = [(clash(s, ch), len(ch), c != s % 2, c) for c, ch in enumerate(channels)]
        channels[min(key)[3]].append(s)
    refs = []
    for ch in channels:
        x = np.zeros(b - a)
        for s in ch:
            x += recording.clean_sources[s].samples[a:b]
        refs.append(Waveform(x))
    return refs[0], refs[1], sorted(channels[0]), sorted(channels[1])


@dataclass
class CssConfig:
    M: int = 4
    seed: int = 0
    backend: str = "affinity"  # or "oracle"
    window: float = 4.0
    hop: float = 3.0
    similarity: str = "ncc"
    strict_selection: bool = False

    def validate(self):
        if self.backend not in ("affinity", "oracle"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.M < 2:
            raise ValueError("M must be >= 2")
        if not self.window / 2 <= self.hop < self.window:
            raise ValueError("hop must satisfy window/2 <= hop < window")
        if self.similarity not in SIMILARITIES:
            raise ValueError(f"unknown stitch similarity {self.similarity!r}")


@dataclass
class ContinuousStreams:
    streams: tuple  # two Waveforms
    plan: SegmentPlan
    log: list = field(default_factory=list)
    results: list = field(default_factory=list)  # SeparationResult per segment
    inventory: SpeakerInventory | None = None
    permutations: list = field(default_factory=list)


def _segment_backend(config: CssConfig, truth, a: int, b: int):
    if config.backend == "affinity":
        return Affinity(), None
    if truth is None:
        raise ValueError("oracle backend needs the simulated recording with ground truth")
    sr = truth.mixture.sample_rate
    r0, r1, c0, c1 = oracle_channel_refs(truth, a / sr, b / sr)
    interference = Waveform(truth.mixture.samples[a:b] - r0.samples - r1.samples)
    return OracleIRM((r0, r1), interference), (c0, c1)


def run_css(recording: Waveform, config: CssConfig | None = None,
            inventory: SpeakerInventory | None = None, truth=None) -> ContinuousStreams:
    """Separate a long recording into two continuous streams.

    Parameters
    ----------
    recording : Waveform
        The long mixture.
    config : CssConfig
        Cluster count, seed, backend and segmentation.
    inventory : SpeakerInventory, optional
        Use these profiles (e.g. from enrollments) instead of clustering the
        recording itself.
    truth : SimulatedRecording, optional
        Ground truth; required by the oracle backend.
    """
    config = config or CssConfig()
    config.validate()
    n = len(recording)
    plan = plan_segments(recording.duration, config.window, config.hop, recording.sample_rate)
    if inventory is None:
        chunks = chunk_embeddings(recording)
        if len(chunks) == 0:
            log.info("recording has no speech content; returning silent streams")
            zero = Waveform(np.zeros(n))
            return ContinuousStreams((zero, zero), plan, [
                {"segment": i, "start_s": s, "end_s": e, "selected": None, "top5": [],
                 "permutation": list(IDENTITY), "backend": config.backend, "note": "silent"}
                for i, (s, e) in enumerate(plan.segments)
            ], [], None, [IDENTITY] * len(plan))
        inventory = build_inventory_self(recording, config.M, config.seed, chunks)

    results, entries = [], []
    for i, (a, b) in enumerate(plan.bounds):
        seg = Waveform(recording.samples[a:b])
        try:
            profiles = None
            entry = {"segment": i, "start_s": a / recording.sample_rate,
                     "end_s": b / recording.sample_rate, "backend": config.backend}
            if len(seg) >= FRAME_SAMPLES:
                seq = embed_frames(seg)
                if (~seq.silent).any():
                    profiles = select(seq, inventory, strict=config.strict_selection)
            entry["selected"] = None if profiles is None else [profiles.p1_index, profiles.p2_index]
            entry["top5"] = [] if profiles is None else profiles.scores.top(5)
            backend, channel_speakers = _segment_backend(config, truth, a, b)
            if channel_speakers is not None:
                entry["oracle_channels"] = [list(map(int, c)) for c in channel_speakers]
            if profiles is None and isinstance(backend, Affinity):
                masks = zero_masks(len(seg))
                res = SeparationResult(apply_masks(seg, masks), masks, None)
            else:
                res = separate_segment(seg, profiles, backend)
        except Exception as exc:
            raise RuntimeError(f"segment {i} [{a}:{b}]: {exc}") from exc
        results.append(res)
        entries.append(entry)

    perms = [IDENTITY]
    entries[0]["stitch"] = list(IDENTITY)
    for i in range(1, len(plan)):
        overlap = plan.bounds[i - 1][1] - plan.bounds[i][0]
        d = stitch_pair(results[i - 1].outputs, results[i].outputs, overlap, config.similarity)
        entries[i]["stitch"] = list(d)
        perms.append(compose(perms[-1], d))

    for i, p in enumerate(perms):
        entries[i]["permutation"] = list(p)
    streams = _assemble([r.outputs for r in results], plan, perms, n)
    return ContinuousStreams(streams, plan, entries, results, inventory, perms)


def _fade_spans(plan: SegmentPlan) -> list:
    """Cross-fade span ``(lo, hi)`` between segment ``i - 1`` and ``i``, for ``i >= 1``.

    The span is the shared region, trimmed so it starts no earlier than the
    end of segment ``i - 2``; an end-aligned last segment can otherwise
    overlap two predecessors. Spans never overlap one another, so at most
    two segments contribute to any sample.
    """
    spans = [None]
    for i in range(1, len(plan)):
        lo = plan.bounds[i][0]
        if i >= 2:
            lo = max(lo, plan.bounds[i - 2][1])
        spans.append((lo, plan.bounds[i - 1][1]))
    return spans


def _assemble(outputs, plan: SegmentPlan, perms, n: int) -> tuple:
    """Cross-fade per-segment output pairs into two streams of ``n`` samples."""
    out = np.zeros((2, n))
    spans = _fade_spans(plan)
    for i, ((a, b), pair) in enumerate(zip(plan.bounds, outputs)):
        w = np.ones(b - a)
        if i > 0:
            lo, hi = spans[i]
            w[: lo - a] = 0.0
            w[lo - a : hi - a] = crossfade(hi - lo)[1]
        if i + 1 < len(plan):
            lo, hi = spans[i + 1]
            w[lo - a : hi - a] = crossfade(hi - lo)[0]
            w[hi - a :] = 0.0
        for s in range(2):
            out[s, a:b] += w * np.asarray(getattr(pair[perms[i][s]], "samples", pair[perms[i][s]]))
    return Waveform(out[0]), Waveform(out[1])


def remix(signal, css: ContinuousStreams) -> tuple:
    """Push another signal through a finished run's masks, permutations and cross-fades.

    Everything after mask estimation is linear, so ``remix`` of each clean
    source and of the noise sum to the run's streams. Useful for measuring
    how much of each speaker ends up in each stream.
    """
    x = np.asarray(getattr(signal, "samples", signal), dtype=np.float64)
    n = len(css.streams[0])
    if len(x) != n:
        raise ValueError(f"signal has {len(x)} samples, streams have {n}")
    if not css.results:
        return Waveform(np.zeros(n)), Waveform(np.zeros(n))
    outs = [apply_masks(Waveform(x[a:b]), res.masks) for (a, b), res in zip(css.plan.bounds, css.results)]
    return _assemble(outs, css.plan, css.permutations, n)
