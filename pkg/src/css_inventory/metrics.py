"""SNR, SI-SDR, overlap ratio and the segment / utterance evaluation protocols."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


DB_CAP = 60.0
OVERLAP_BUCKETS = ("0", "0-25", "25-50", "50-75", "75-100")
ACTIVE_RMS = 1e-4


def _arr(w) -> np.ndarray:
    return np.asarray(getattr(w, "samples", w), dtype=np.float64)


def _db(num: float, den: float) -> float:
    if den <= 0:
        return DB_CAP
    if num <= 0:
        return -DB_CAP
    return float(np.clip(10 * np.log10(num / den), -DB_CAP, DB_CAP))


def snr(ref, est) -> float:
    """``10 log10(|s|^2 / |s - est|^2)`` clipped to +/-60 dB."""
    s, e = _arr(ref), _arr(est)
    if s.shape != e.shape:
        raise ValueError(f"length mismatch: {s.shape} vs {e.shape}")
    es = float(s @ s)
    if es <= 0:
        raise ValueError("reference signal is silent")
    r = s - e
    return _db(es, float(r @ r))


def si_sdr(ref, est) -> float:
    """Scale-invariant SDR: ``est`` projected on ``ref``, clipped to +/-60 dB."""
    s, e = _arr(ref), _arr(est)
    if s.shape != e.shape:
        raise ValueError(f"length mismatch: {s.shape} vs {e.shape}")
    ss = float(s @ s)
    if ss <= 0 or not np.any(e):
        raise ValueError("si_sdr needs non-zero reference and estimate")
    target = (float(e @ s) / ss) * s
    resid = target - e
    return _db(float(target @ target), float(resid @ resid))


METRICS = {"snr": snr, "si_sdr": si_sdr}


def _metric(metric):
    return METRICS[metric] if isinstance(metric, str) else metric


def _merge(intervals):
    out = []
    for a, b in sorted(intervals):
        if out and a <= out[-1][1]:
            out[-1][1] = max(out[-1][1], b)
        else:
            out.append([a, b])
    return out


def overlap_ratio(script, window=None) -> float:
    """Time with >= 2 active speakers over time with >= 1, inside ``window``.

    ``window`` is ``(start, end)`` in seconds or ``None`` for the whole
    recording. Returns 0 when nobody talks.
    """
    lo, hi = (0.0, script.duration) if window is None else window
    per_speaker = {}
    for e in script.events:
        a, b = max(e.onset, lo), min(e.offset, hi)
        if b > a:
            per_speaker.setdefault(e.speaker_id, []).append((a, b))
    marks = []
    for ivs in per_speaker.values():
        for a, b in _merge(ivs):
            marks.append((a, 1))
            marks.append((b, -1))
    marks.sort()
    active = overlapped = 0.0
    level, prev = 0, None
    for t, d in marks:
        if prev is not None and t > prev:
            if level >= 1:
                active += t - prev
            if level >= 2:
                overlapped += t - prev
        level += d
        prev = t
    return overlapped / active if active > 0 else 0.0


def overlap_bucket(ratio: float) -> str:
    pct = 100.0 * ratio
    if pct <= 0:
        return "0"
    if pct <= 25:
        return "0-25"
    if pct <= 50:
        return "25-50"
    if pct <= 75:
        return "50-75"
    return "75-100"


def _is_active(w) -> bool:
    x = _arr(w)
    return len(x) > 0 and float(np.sqrt(np.mean(x**2))) >= ACTIVE_RMS


def eval_segment(outputs, truths, metric="snr", active=None):
    """Best-permutation score of two outputs against two references.

    With one active reference only that reference is scored, against
    whichever output matches it better. Returns ``None`` when neither
    reference is active.
    """
    m = _metric(metric)
    o0, o1 = (_arr(o) for o in outputs)
    t0, t1 = (_arr(t) for t in truths)
    if not (len(o0) == len(o1) == len(t0) == len(t1)):
        raise ValueError("outputs and references must share one length")
    act = [_is_active(t0), _is_active(t1)] if active is None else list(active)
    outs = (o0, o1)
    if not any(act):
        return None
    if act[0] and act[1]:
        ident = 0.5 * (_safe(m, t0, o0) + _safe(m, t1, o1))
        swap = 0.5 * (_safe(m, t0, o1) + _safe(m, t1, o0))
        return max(ident, swap)
    ref = t0 if act[0] else t1
    return max(_safe(m, ref, o) for o in outs)


def _safe(m, ref, est) -> float:
    try:
        return m(ref, est)
    except ValueError:
        # silent estimate: nothing of the reference recovered
        return -DB_CAP if m is si_sdr else 0.0


@dataclass
class EvalReport:
    metric: str
    items: list = field(default_factory=list)  # dicts with "score", "bucket", ...

    def scores(self, key="score"):
        return np.array([it[key] for it in self.items if it.get(key) is not None], dtype=float)

    def average(self, key="score") -> float | None:
        s = self.scores(key)
        return float(s.mean()) if len(s) else None

    def bucket_averages(self, key="score") -> dict:
        out = {}
        for b in OVERLAP_BUCKETS:
            vals = [it[key] for it in self.items if it.get("bucket") == b and it.get(key) is not None]
            out[b] = float(np.mean(vals)) if vals else None
        return out

    def summary(self) -> dict:
        s = {
            "metric": self.metric,
            "count": len(self.items),
            "average": self.average(),
            "buckets": self.bucket_averages(),
        }
        if any("unprocessed" in it for it in self.items):
            s["unprocessed_average"] = self.average("unprocessed")
            s["unprocessed_buckets"] = self.bucket_averages("unprocessed")
            if s["average"] is not None and s["unprocessed_average"] is not None:
                s["improvement"] = s["average"] - s["unprocessed_average"]
        return s

    def to_json(self) -> str:
        return json.dumps({"summary": self.summary(), "items": self.items}, indent=1, sort_keys=True)

    def to_table(self, title: str = "", label: str = "Separated") -> str:
        """Aligned text table: one row per method, one column per overlap bucket."""
        rows = [("Unprocessed", "unprocessed"), (label, "score")]
        head = ["Method", *OVERLAP_BUCKETS, "Average"]
        lines = [title] if title else []
        body = []
        for name, key in rows:
            if key == "unprocessed" and not any("unprocessed" in it for it in self.items):
                continue
            b = self.bucket_averages(key)
            avg = self.average(key)
            body.append([name, *(_fmt(b[k]) for k in OVERLAP_BUCKETS), _fmt(avg)])
        widths = [max(len(r[i]) for r in [head, *body]) for i in range(len(head))]
        fmt = lambda r: "  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths)))
        lines.append(fmt(head))
        lines.append("-" * len(lines[-1]))
        lines.extend(fmt(r) for r in body)
        return "\n".join(lines)


def _fmt(v) -> str:
    return "-" if v is None else f"{v:.1f}"


def eval_utterances(streams, recording, metric="si_sdr") -> EvalReport:
    """Score every ground-truth utterance against the better of the two streams.

    Each utterance is cut from both streams at its onset and offset and
    compared with the same span of the speaker's clean source; the
    unprocessed mixture span is scored alongside for reference.
    """
    m = _metric(metric)
    s0, s1 = (_arr(s) for s in getattr(streams, "streams", streams))
    mix = _arr(recording.mixture)
    sr = recording.mixture.sample_rate
    report = EvalReport(metric if isinstance(metric, str) else getattr(metric, "__name__", "metric"))
    for k, ev in enumerate(recording.script.events):
        a, b = int(round(ev.onset * sr)), int(round(ev.offset * sr))
        ref = _arr(recording.clean_sources[ev.speaker_id])[a:b]
        if not np.any(ref):
            continue
        per_stream = [_safe(m, ref, s0[a:b]), _safe(m, ref, s1[a:b])]
        best = int(np.argmax(per_stream))
        report.items.append({
            "utterance": k,
            "speaker": ev.speaker_id,
            "onset_s": ev.onset,
            "offset_s": ev.offset,
            "stream": best,
            "score": per_stream[best],
            "unprocessed": _safe(m, ref, mix[a:b]),
            "bucket": overlap_bucket(overlap_ratio(recording.script, (ev.onset, ev.offset))),
        })
    return report


def eval_segments(streams, recording, segments, metric="snr") -> EvalReport:
    """Best-permutation score of the two streams in each ``(start_s, end_s)`` window.

    References are the recording's clean sources split over two channels so
    that concurrent talkers are apart (see
    :func:`css_inventory.pipeline.oracle_channel_refs`). Windows without
    speech are skipped; the mixture is scored as both outputs alongside.
    """
    from .pipeline import oracle_channel_refs

    s0, s1 = (_arr(s) for s in getattr(streams, "streams", streams))
    mix = _arr(recording.mixture)
    sr = recording.mixture.sample_rate
    report = EvalReport(metric if isinstance(metric, str) else getattr(metric, "__name__", "metric"))
    for k, (start, end) in enumerate(segments):
        a, b = int(round(start * sr)), int(round(end * sr))
        r0, r1, c0, c1 = oracle_channel_refs(recording, start, end)
        refs = (r0.samples, r1.samples)
        score = eval_segment((s0[a:b], s1[a:b]), refs, metric)
        if score is None:
            continue
        report.items.append({
            "segment": k,
            "start_s": start,
            "end_s": end,
            "speakers": [c0, c1],
            "score": score,
            "unprocessed": eval_segment((mix[a:b], mix[a:b]), refs, metric),
            "bucket": overlap_bucket(overlap_ratio(recording.script, (start, end))),
        })
    return report
