"""Profile selection: per-frame softmax over inventory dot products, frame-averaged, top two."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedder import Embedding, EmbeddingSequence
from .inventory import SpeakerInventory


@dataclass(frozen=True)
class SelectionScores:
    per_frame: np.ndarray  # (T_y, M) softmax weights; rows of silent frames are NaN
    averaged: np.ndarray  # (M,)

    def top(self, k: int = 5) -> list:
        order = np.lexsort((np.arange(len(self.averaged)), -self.averaged))[:k]
        return [{"profile": int(j), "weight": float(self.averaged[j])} for j in order]


@dataclass(frozen=True)
class SelectedProfiles:
    p1_index: int
    p2_index: int
    e_p1: Embedding
    e_p2: Embedding
    scores: SelectionScores | None = None

    def swapped(self) -> "SelectedProfiles":
        return SelectedProfiles(self.p2_index, self.p1_index, self.e_p2, self.e_p1, self.scores)


def softmax(d: np.ndarray, axis: int = -1) -> np.ndarray:
    z = d - np.max(d, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def score(mix_seq: EmbeddingSequence, inv: SpeakerInventory, strict: bool = False) -> SelectionScores:
    """Softmax of frame-by-profile dot products, averaged over frames.

    Silent frames are left out of the average unless ``strict`` is set, in
    which case every frame counts (silent rows are zero vectors and so score
    uniformly).
    """
    if inv.M < 2:
        raise ValueError("inventory needs at least two profiles")
    frames = mix_seq.frames
    keep = np.ones(len(frames), dtype=bool) if strict else ~mix_seq.silent
    if not keep.any():
        raise ValueError("no non-silent frames to score")
    d = frames @ inv.profiles.T
    w = softmax(d, axis=1)
    averaged = w[keep].mean(axis=0)
    per_frame = w.copy()
    per_frame[~keep] = np.nan
    return SelectionScores(per_frame, averaged)


def select_top2(scores: SelectionScores, inv: SpeakerInventory) -> SelectedProfiles:
    """The two highest averaged scores; equal scores go to the lower index."""
    a = scores.averaged
    if len(a) < 2:
        raise ValueError("need at least two profiles")
    order = np.lexsort((np.arange(len(a)), -a))
    p1, p2 = int(order[0]), int(order[1])
    return SelectedProfiles(p1, p2, Embedding(inv.profiles[p1]), Embedding(inv.profiles[p2]), scores)


def select(mix_seq: EmbeddingSequence, inv: SpeakerInventory, strict: bool = False) -> SelectedProfiles:
    return select_top2(score(mix_seq, inv, strict), inv)
