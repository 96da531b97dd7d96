"""Seeded multi-talker recordings with ground-truth timelines.

Two generators are provided: :func:`generate_segment` builds a 4 s
two-speaker training-style mixture following one of four overlap patterns,
and :func:`generate_recording` chains such episodes into a long
conversation whose overall overlap ratio is steered towards a target.

Room acoustics use a parametric exponentially-decaying impulse response
instead of an image-method room model. Speech comes from
:func:`synth_speaker` by default; :class:`WavCorpus` swaps in real audio.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from . import seeding
from .audio import SAMPLE_RATE, Waveform, read_wav, write_wav

SEGMENT_SECONDS = 4.0
MUTE_PROBABILITY = 0.1
MAX_TARGET_OVERLAP = 1.0 - MUTE_PROBABILITY
MIN_OVERLAP_S = 1.0
MAX_SEQUENTIAL_GAP_S = 0.5
SNR_RANGE_DB = (0.0, 20.0)
RT60_RANGE_S = (0.1, 0.5)
UTTERANCE_RMS = 0.1


class OverlapPattern(enum.Enum):
    INCLUSIVE = "inclusive"
    SEQUENTIAL = "sequential"
    FULLY_OVERLAPPED = "fully_overlapped"
    PARTIALLY_OVERLAPPED = "partially_overlapped"


PATTERN_PROBABILITIES = {
    OverlapPattern.INCLUSIVE: 0.10,
    OverlapPattern.SEQUENTIAL: 0.20,
    OverlapPattern.FULLY_OVERLAPPED: 0.35,
    OverlapPattern.PARTIALLY_OVERLAPPED: 0.35,
}
_PATTERNS = list(PATTERN_PROBABILITIES)
_PATTERN_P = np.array([PATTERN_PROBABILITIES[p] for p in _PATTERNS])


@dataclass(frozen=True)
class UtteranceEvent:
    speaker_id: int
    onset: float
    offset: float

    def __post_init__(self):
        if not 0 <= self.onset < self.offset:
            raise ValueError(f"invalid event interval [{self.onset}, {self.offset}]")

    @property
    def duration(self) -> float:
        return self.offset - self.onset

    def to_json(self):
        return {"speaker": self.speaker_id, "onset_s": self.onset, "offset_s": self.offset}


@dataclass(frozen=True)
class RecordingScript:
    events: tuple
    duration: float

    def __post_init__(self):
        events = tuple(sorted(self.events, key=lambda e: (e.onset, e.speaker_id)))
        for e in events:
            if e.offset > self.duration + 1e-9:
                raise ValueError(f"event {e} extends past recording end {self.duration}")
        object.__setattr__(self, "events", events)

    @property
    def speaker_ids(self) -> frozenset:
        return frozenset(e.speaker_id for e in self.events)

    def max_concurrency(self) -> int:
        marks = []
        for e in self.events:
            marks.append((e.onset, 1))
            marks.append((e.offset, -1))
        # ends sort before starts at the same instant
        marks.sort(key=lambda m: (m[0], m[1]))
        level = best = 0
        for _, d in marks:
            level += d
            best = max(best, level)
        return best

    def active_speakers(self, start: float, end: float) -> list:
        return sorted({e.speaker_id for e in self.events if e.onset < end and e.offset > start})

    def to_json(self):
        return {
            "duration_s": self.duration,
            "speakers": sorted(self.speaker_ids),
            "events": [e.to_json() for e in self.events],
        }

    @classmethod
    def from_json(cls, d):
        events = [UtteranceEvent(int(e["speaker"]), float(e["onset_s"]), float(e["offset_s"]))
                  for e in d["events"]]
        return cls(tuple(events), float(d["duration_s"]))


@dataclass(frozen=True)
class SimulatedRecording:
    mixture: Waveform
    clean_sources: dict  # speaker_id -> Waveform
    script: RecordingScript
    noise: Waveform
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.mixture)
        for w in [*self.clean_sources.values(), self.noise]:
            if len(w) != n:
                raise ValueError("all waveforms of a recording must have equal length")

    def save(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        write_wav(d / "mixture.wav", self.mixture)
        for spk, w in sorted(self.clean_sources.items()):
            write_wav(d / f"source_{spk}.wav", w)
        write_wav(d / "noise.wav", self.noise)
        (d / "script.json").write_text(json.dumps(self.script.to_json(), indent=1))
        (d / "meta.json").write_text(json.dumps(self.meta, indent=1, sort_keys=True))
        return d

    @classmethod
    def load(cls, directory) -> "SimulatedRecording":
        d = Path(directory)
        script = RecordingScript.from_json(json.loads((d / "script.json").read_text()))
        sources = {}
        for p in sorted(d.glob("source_*.wav")):
            sources[int(p.stem.split("_", 1)[1])] = read_wav(p)
        meta = json.loads((d / "meta.json").read_text()) if (d / "meta.json").exists() else {}
        return cls(read_wav(d / "mixture.wav"), sources, script, read_wav(d / "noise.wav"), meta)


# -- speech sources ------------------------------------------------------------


@dataclass(frozen=True)
class VoiceParams:
    f0: float
    tilt_db_per_octave: float
    formants: tuple  # (centre Hz, bandwidth Hz, gain dB)


def voice_params(speaker_id: int) -> VoiceParams:
    r = seeding.rng(speaker_id, "voice")
    f0 = 90.0 + 7.0 * (speaker_id % 40)
    tilt = -float(r.uniform(4.0, 12.0))
    centres = (r.uniform(300, 900), r.uniform(900, 2300), r.uniform(2300, 3800), r.uniform(3800, 5500))
    formants = tuple(
        (float(c), float(r.uniform(80, 220)), float(r.uniform(8, 20))) for c in centres
    )
    return VoiceParams(f0, tilt, formants)


def _harmonic_gains(params: VoiceParams, freqs: np.ndarray) -> np.ndarray:
    octaves = np.log2(np.maximum(freqs, 1.0) / params.f0)
    db = params.tilt_db_per_octave * octaves
    for centre, bw, gain in params.formants:
        db = db + gain / (1.0 + ((freqs - centre) / bw) ** 2)
    return 10 ** (db / 20)


def synth_speaker(speaker_id: int, duration: float, seed: int) -> Waveform:
    """Deterministic harmonic "voice" for a speaker.

    The fundamental is ``90 + 7 * (speaker_id % 40)`` Hz with a slow
    seeded intonation contour; harmonic amplitudes follow a speaker-specific
    spectral tilt plus resonant band emphasis, and a 4 Hz syllabic
    amplitude modulation is applied. Output RMS is fixed.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    n = int(round(duration * SAMPLE_RATE))
    params = voice_params(speaker_id)
    r = seeding.rng(seed, "utterance", speaker_id)
    t = np.arange(n) / SAMPLE_RATE
    ph = r.uniform(0, 2 * np.pi, size=3)
    contour = 1 + 0.012 * np.sin(2 * np.pi * 0.6 * t + ph[0]) + 0.006 * np.sin(2 * np.pi * 1.7 * t + ph[1])
    phase = 2 * np.pi * np.cumsum(params.f0 * contour) / SAMPLE_RATE
    n_harm = int(6000 // (params.f0 * 1.02))
    gains = _harmonic_gains(params, params.f0 * np.arange(1, n_harm + 1))
    offsets = r.uniform(0, 2 * np.pi, size=n_harm)
    # harmonic h is Im(g_h * exp(i*offset_h) * z**h), z = exp(i*phase)
    z = np.exp(1j * phase)
    zh = np.ones(n, dtype=np.complex128)
    acc = np.zeros(n, dtype=np.complex128)
    coef = gains * np.exp(1j * offsets)
    for h in range(n_harm):
        zh *= z
        acc += coef[h] * zh
    x = acc.imag
    x *= 0.55 + 0.45 * np.sin(2 * np.pi * 4.0 * t + ph[2])
    ramp = min(n // 2, int(0.01 * SAMPLE_RATE))
    if ramp:
        fade = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        x[:ramp] *= fade
        x[n - ramp :] *= fade[::-1]
    rms = np.sqrt(np.mean(x**2))
    if rms > 0:
        x *= UTTERANCE_RMS / rms
    return Waveform(x)


class SyntheticCorpus:
    """Default speech source backed by :func:`synth_speaker`."""

    def speech(self, speaker_id: int, duration: float, seed: int) -> Waveform:
        return synth_speaker(speaker_id, duration, seed)


class WavCorpus:
    """Real speech from a ``spk<id>/*.wav`` directory tree.

    Files of a speaker are concatenated in a seeded order and cropped at a
    seeded offset to the requested duration, then RMS-normalized.
    """

    def __init__(self, root):
        self.root = Path(root)
        self.files = {}
        for d in sorted(self.root.glob("spk*")):
            if d.is_dir():
                wavs = sorted(d.glob("*.wav"))
                if wavs:
                    self.files[int(d.name[3:])] = wavs
        if not self.files:
            raise ValueError(f"no spk<id>/*.wav files under {self.root}")

    @property
    def speaker_ids(self):
        return sorted(self.files)

    def speech(self, speaker_id: int, duration: float, seed: int) -> Waveform:
        if speaker_id not in self.files:
            raise KeyError(f"speaker {speaker_id} not in corpus {self.root}")
        n = int(round(duration * SAMPLE_RATE))
        r = seeding.rng(seed, "wavcorpus", speaker_id)
        paths = self.files[speaker_id]
        pieces, total = [], 0
        for i in r.permutation(len(paths)).tolist() * max(1, math.ceil(n / 1000)):
            a = read_wav(paths[i]).samples
            if len(a) == 0:
                continue
            pieces.append(a)
            total += len(a)
            if total >= n:
                break
        x = np.concatenate(pieces)
        start = int(r.integers(0, len(x) - n + 1))
        x = x[start : start + n].copy()
        rms = np.sqrt(np.mean(x**2))
        if rms > 0:
            x *= UTTERANCE_RMS / rms
        return Waveform(x)


# -- acoustics -------------------------------------------------------------------


def room_impulse_response(rt60: float, seed: int) -> np.ndarray:
    """Direct path plus a seeded Gaussian tail decaying 60 dB over ``rt60``.

    The tail carries ``rt60 / 0.5`` times the direct-path energy, so short
    reverberation times converge to the identity filter.
    """
    n = max(2, int(round(rt60 * SAMPLE_RATE)))
    r = seeding.rng(seed, "rir")
    t = np.arange(1, n) / SAMPLE_RATE
    tail = r.standard_normal(n - 1) * np.exp(-math.log(1000.0) / rt60 * t)
    tail *= math.sqrt((rt60 / 0.5) / np.sum(tail**2))
    h = np.empty(n)
    h[0] = 1.0
    h[1:] = tail
    return h


def apply_reverb(w: Waveform, rt60: float, seed: int) -> Waveform:
    if not 0 < rt60 <= 1.0:
        raise ValueError(f"rt60 must be in (0, 1.0] seconds, got {rt60}")
    if len(w) == 0:
        return w
    h = room_impulse_response(rt60, seed)
    y = fftconvolve(w.samples, h)[: len(w)]
    return Waveform(y)


def add_noise(w: Waveform, snr_db: float, seed: int) -> tuple:
    """Add white Gaussian noise at exactly ``snr_db`` relative to ``w``.

    Returns ``(noisy, noise)``.
    """
    energy = w.energy()
    if energy <= 0:
        raise ValueError("cannot set SNR on silent signal")
    r = seeding.rng(seed, "noise")
    n = r.standard_normal(len(w))
    n *= math.sqrt(energy / 10 ** (snr_db / 10) / np.dot(n, n))
    noise = Waveform(n)
    return Waveform(w.samples + n), noise


# -- patterns and segment timing -------------------------------------------------


def sample_pattern(rng: np.random.Generator) -> OverlapPattern:
    return _PATTERNS[int(rng.choice(len(_PATTERNS), p=_PATTERN_P))]


def _ms(r, lo, hi) -> int:
    return int(r.integers(int(lo), int(hi) + 1))


def _pattern_timing(pattern, r, total_ms=None):
    """Interval pair ``((a_on, a_off), (b_on, b_off))`` in integer ms.

    With ``total_ms`` the pair fills a fixed window (4 s segments); without
    it, utterance lengths are free (long-recording episodes).
    """
    if total_ms is not None:
        T = total_ms
        if pattern is OverlapPattern.FULLY_OVERLAPPED:
            return (0, T), (0, T)
        if pattern is OverlapPattern.SEQUENTIAL:
            gap = _ms(r, 0, 500)
            t1 = _ms(r, 1000, T - 1000 - gap)
            return (0, t1), (t1 + gap, T)
        if pattern is OverlapPattern.INCLUSIVE:
            s0, e0 = _ms(r, 0, 300), _ms(r, T - 300, T)
            li = _ms(r, 1000, e0 - s0 - 400)
            si = _ms(r, s0 + 200, e0 - 200 - li)
            return (s0, e0), (si, si + li)
        ov = _ms(r, 1000, 2500)
        s2 = _ms(r, 500, T - 500 - ov)
        return (0, s2 + ov), (s2, T)

    if pattern is OverlapPattern.FULLY_OVERLAPPED:
        l = _ms(r, 1500, 4000)
        return (0, l), (0, l)
    if pattern is OverlapPattern.SEQUENTIAL:
        la, lb, gap = _ms(r, 1500, 5000), _ms(r, 1500, 5000), _ms(r, 0, 500)
        return (0, la), (la + gap, la + gap + lb)
    if pattern is OverlapPattern.INCLUSIVE:
        la = _ms(r, 3000, 6000)
        lb = _ms(r, 1000, min(3000, la - 600))
        sb = _ms(r, 300, la - 300 - lb)
        return (0, la), (sb, sb + lb)
    la, lb = _ms(r, 2000, 5000), _ms(r, 2000, 5000)
    ov = _ms(r, 1000, min(la, lb) - 500)
    return (0, la), (la - ov, la - ov + lb)


def _render(events, duration_s, seed, corpus, rt60, snr_db, meta) -> SimulatedRecording:
    n = int(round(duration_s * SAMPLE_RATE))
    dry = {}
    for k, e in enumerate(events):
        a = int(round(e.onset * SAMPLE_RATE))
        b = int(round(e.offset * SAMPLE_RATE))
        speech = corpus.speech(e.speaker_id, (b - a) / SAMPLE_RATE, seeding.sub_seed(seed, "event", k))
        track = dry.setdefault(e.speaker_id, np.zeros(n))
        track[a:b] += speech.samples[: b - a]
    sources = {
        spk: apply_reverb(Waveform(x), rt60, seeding.sub_seed(seed, "room", spk))
        for spk, x in sorted(dry.items())
    }
    speech_sum = Waveform(np.sum([w.samples for w in sources.values()], axis=0))
    _, noise = add_noise(speech_sum, snr_db, seeding.sub_seed(seed, "noise"))
    mix = speech_sum.samples + noise.samples
    gain = min(1.0, 0.9 / max(np.max(np.abs(mix)), 1e-12))
    sources = {spk: w.scaled(gain) for spk, w in sources.items()}
    noise = noise.scaled(gain)
    # summed in a fixed order so the identity mixture = sum(sources) + noise is exact
    total = np.zeros(n)
    for spk in sorted(sources):
        total = total + sources[spk].samples
    total = total + noise.samples
    meta = dict(meta, rt60=rt60, snr_db=snr_db, gain=gain)
    return SimulatedRecording(Waveform(total), sources, RecordingScript(tuple(events), duration_s),
                              noise, meta)


def generate_segment(spk_a: int, spk_b: int, pattern: OverlapPattern, seed: int,
                     corpus=None, rt60: float | None = None,
                     snr_db: float | None = None) -> SimulatedRecording:
    """4 s two-speaker mixture realizing ``pattern``.

    With probability 0.1 one of the two speakers is muted and the script
    holds a single event.
    """
    if spk_a == spk_b or min(spk_a, spk_b) < 0:
        raise ValueError(f"need two distinct non-negative speaker ids, got {spk_a}, {spk_b}")
    corpus = corpus or SyntheticCorpus()
    r = seeding.rng(seed, "segment")
    (a0, a1), (b0, b1) = _pattern_timing(pattern, r, total_ms=int(SEGMENT_SECONDS * 1000))
    if r.random() < 0.5 and pattern is not OverlapPattern.FULLY_OVERLAPPED:
        # which speaker takes the first / outer role
        spk_a, spk_b = spk_b, spk_a
    events = [UtteranceEvent(spk_a, a0 / 1000, a1 / 1000), UtteranceEvent(spk_b, b0 / 1000, b1 / 1000)]
    muted = None
    if r.random() < MUTE_PROBABILITY:
        drop = int(r.integers(2))
        muted = events[drop].speaker_id
        events = [events[1 - drop]]
    rt60 = float(r.uniform(*RT60_RANGE_S)) if rt60 is None else rt60
    snr_db = float(r.uniform(*SNR_RANGE_DB)) if snr_db is None else snr_db
    meta = {"kind": "segment", "seed": seed, "pattern": pattern.value, "muted": muted}
    return _render(events, SEGMENT_SECONDS, seed, corpus, rt60, snr_db, meta)


def _overlap_union(intervals) -> tuple:
    """(overlapped time, active time) in ms for integer intervals."""
    marks = []
    for a, b in intervals:
        marks.append((a, 1))
        marks.append((b, -1))
    marks.sort()
    ov = act = level = 0
    prev = None
    for t, d in marks:
        if prev is not None:
            if level >= 1:
                act += t - prev
            if level >= 2:
                ov += t - prev
        level += d
        prev = t
    return ov, act


def _plan_conversation(n_speakers, total_ms, target, r):
    order = list(r.permutation(n_speakers))
    intervals = []  # (start, end, speaker)
    cursor = _ms(r, 0, 500)
    ov = act = 0
    tol = 0.02
    while True:
        if order:
            a = int(order.pop())
            b = int(order.pop()) if order else int(r.choice([s for s in range(n_speakers) if s != a]))
        else:
            a, b = (int(s) for s in r.choice(n_speakers, size=2, replace=False))
        best = None
        for _ in range(25):
            pattern = sample_pattern(r)
            timing = _pattern_timing(pattern, r)
            eo, ea = _overlap_union(timing)
            ratio = (ov + eo) / (act + ea)
            dist = abs(ratio - target)
            if best is None or dist < best[0]:
                best = (dist, timing)
            if dist <= max(tol, abs(ov / act - target) if act else 1.0):
                break
        (a0, a1), (b0, b1) = best[1]
        pair = [(a0, a1, a), (b0, b1, b)]
        if r.random() < MUTE_PROBABILITY:
            del pair[int(r.integers(2))]
        end = max(p[1] for p in pair)
        if cursor + end > total_ms:
            break
        intervals.extend((cursor + s, cursor + e, spk) for s, e, spk in pair)
        eo, ea = _overlap_union([(s, e) for s, e, _ in pair])
        ov, act = ov + eo, act + ea
        cursor += end + _ms(r, 0, 500)
    return intervals


def generate_recording(n_speakers: int, duration: float, target_overlap: float, seed: int,
                       corpus=None, rt60: float | None = None, snr_db: float | None = None,
                       tolerance: float = 0.05, max_attempts: int = 20) -> SimulatedRecording:
    """Long conversation among speakers ``0 .. n_speakers-1``.

    Episodes of randomly paired speakers (each following an overlap
    pattern) are laid end to end with 0-0.5 s gaps. Candidate patterns are
    rejected while they push the running overlap ratio away from
    ``target_overlap``; the whole plan is redrawn until the realized ratio is
    within ``tolerance`` and every speaker talks.
    """
    if n_speakers < 2:
        raise ValueError("n_speakers must be >= 2")
    if duration < 10:
        raise ValueError("duration must be >= 10 s")
    if not 0 <= target_overlap < 1:
        raise ValueError("target_overlap must be in [0, 1)")
    if target_overlap > MAX_TARGET_OVERLAP:
        # muted episodes carry no overlap, so the expected ratio cannot pass 1 - p_mute
        raise ValueError(
            f"target_overlap {target_overlap:.2f} is infeasible: with {MUTE_PROBABILITY:.0%} of episodes "
            f"muted the achievable ratio is about {MAX_TARGET_OVERLAP:.2f}"
        )
    corpus = corpus or SyntheticCorpus()
    total_ms = int(round(duration * 1000))
    for attempt in range(max_attempts):
        r = seeding.rng(seed, "recording", attempt)
        intervals = _plan_conversation(n_speakers, total_ms, target_overlap, r)
        ov, act = _overlap_union([(s, e) for s, e, _ in intervals])
        ratio = ov / act if act else 0.0
        used = {spk for _, _, spk in intervals}
        if abs(ratio - target_overlap) <= tolerance and len(used) == n_speakers:
            break
    else:
        raise ValueError(
            f"could not reach overlap ratio {target_overlap:.2f} +/- {tolerance} "
            f"with {n_speakers} speakers in {duration} s after {max_attempts} attempts"
        )
    events = [UtteranceEvent(spk, s / 1000, e / 1000) for s, e, spk in intervals]
    rr = seeding.rng(seed, "recording-acoustics")
    rt60 = float(rr.uniform(*RT60_RANGE_S)) if rt60 is None else rt60
    snr_db = float(rr.uniform(*SNR_RANGE_DB)) if snr_db is None else snr_db
    meta = {
        "kind": "recording",
        "seed": seed,
        "n_speakers": n_speakers,
        "duration_s": duration,
        "target_overlap": target_overlap,
        "realized_overlap": ratio,
        "attempt": attempt,
    }
    return _render(events, duration, seed, corpus, rt60, snr_db, meta)


def enrollment(speaker_id: int, seed: int, duration: float = 10.0, corpus=None) -> Waveform:
    """Single-speaker enrollment utterance (10 s by default)."""
    corpus = corpus or SyntheticCorpus()
    return corpus.speech(speaker_id, duration, seeding.sub_seed(seed, "enroll", speaker_id))
