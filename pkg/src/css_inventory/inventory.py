"""Speaker inventories: enrolled profiles or k-means centroids of the mixture itself."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import seeding
from .audio import Waveform
from .embedder import (
    CHUNK_SECONDS,
    ChunkEmbeddings,
    EMB_MAGIC,
    chunk_embeddings,
    embed_frames,
    mean_pool,
    read_matrix,
    write_matrix,
)


N_INIT = 10


@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    n_iter: int = 0
    history: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.centroids, self.assignments, self.inertia))


def _sq_dists(points: np.ndarray, centres: np.ndarray) -> np.ndarray:
    d = (
        np.sum(points**2, axis=1)[:, None]
        - 2.0 * points @ centres.T
        + np.sum(centres**2, axis=1)[None, :]
    )
    return np.maximum(d, 0.0)


def kmeans_plusplus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centres = [points[int(rng.integers(n))]]
    closest = _sq_dists(points, centres[0][None, :])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest / total))
        centres.append(points[idx])
        closest = np.minimum(closest, _sq_dists(points, points[idx][None, :])[:, 0])
    return np.array(centres)


def kmeans(points, M: int, seed: int = 0, max_iter: int = 100, tol: float = 1e-6,
           init: np.ndarray | None = None) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    Iterates until no centroid moves by ``tol`` or more (Euclidean) or
    ``max_iter`` is reached. A cluster left empty is re-seeded at the point
    farthest from its current centroid. ``history`` holds the inertia after
    every assignment step; it never increases.

    Parameters
    ----------
    points : (N, K) array
    M : int
        Number of clusters, ``1 <= M <= N``.
    init : (M, K) array, optional
        Explicit initial centroids (skips k-means++).
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("points must be an (N, K) matrix")
    N = X.shape[0]
    if M < 1:
        raise ValueError("M must be >= 1")
    if N < M:
        raise ValueError(f"fewer points than clusters ({N} < {M})")
    if not np.all(np.isfinite(X)):
        raise ValueError("points must be finite")
    if init is None:
        C = kmeans_plusplus(X, M, np.random.default_rng(seed))
    else:
        C = np.array(init, dtype=np.float64)
        if C.shape != (M, X.shape[1]):
            raise ValueError(f"init must have shape {(M, X.shape[1])}")

    history = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        D = _sq_dists(X, C)
        labels = np.argmin(D, axis=1)
        history.append(float(D[np.arange(N), labels].sum()))
        new = C.copy()
        for j in range(M):
            members = labels == j
            if members.any():
                new[j] = X[members].mean(axis=0)
        counts = np.bincount(labels, minlength=M)
        for j in np.flatnonzero(counts == 0):
            # farthest point from its own centroid takes over the empty slot
            cost = _sq_dists(X, new)[np.arange(N), labels]
            far = int(np.argmax(cost))
            new[j] = X[far]
            labels[far] = j
        shift = np.sqrt(np.sum((new - C) ** 2, axis=1)).max()
        C = new
        if shift < tol:
            break
    D = _sq_dists(X, C)
    labels = np.argmin(D, axis=1)
    inertia = float(D[np.arange(N), labels].sum())
    history.append(inertia)
    return KMeansResult(C, labels, inertia, n_iter, history)


@dataclass(frozen=True)
class SpeakerInventory:
    """``M`` unit-norm speaker profiles plus how they were obtained.

    ``provenance["kind"]`` is ``"enrolled"`` (with ``speaker_ids``) or
    ``"clustered"`` (with ``cluster_sizes``, ``inertia``, and the chunk to
    cluster assignment used to build it).
    """

    profiles: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        P = np.asarray(self.profiles, dtype=np.float64)
        if P.ndim != 2 or P.shape[0] < 2:
            raise ValueError("an inventory needs at least two profiles")
        if not np.allclose(np.linalg.norm(P, axis=1), 1.0, atol=1e-6):
            raise ValueError("inventory profiles must be unit norm")
        P = P.copy()
        P.flags.writeable = False
        object.__setattr__(self, "profiles", P)

    @property
    def M(self) -> int:
        return self.profiles.shape[0]

    def save(self, path, extra: dict | None = None):
        write_matrix(path, self.profiles, EMB_MAGIC, dict(extra or {}, provenance=self.provenance))

    @classmethod
    def load(cls, path) -> "SpeakerInventory":
        P, side = read_matrix(path, EMB_MAGIC)
        P = P / np.linalg.norm(P, axis=1, keepdims=True)
        return cls(P, (side or {}).get("provenance", {}))


def build_inventory_from_enrollments(enrollments, speaker_ids=None) -> SpeakerInventory:
    """One profile per enrollment utterance, in the given order."""
    enrollments = list(enrollments)
    if len(enrollments) < 2:
        raise ValueError("need at least two enrollments")
    rows = []
    for i, w in enumerate(enrollments):
        try:
            rows.append(mean_pool(embed_frames(w)).vector)
        except ValueError as exc:
            raise ValueError(f"enrollment {i} has no speech content") from exc
    ids = list(range(len(rows))) if speaker_ids is None else [int(s) for s in speaker_ids]
    return SpeakerInventory(np.array(rows), {"kind": "enrolled", "speaker_ids": ids})


def build_inventory_self(mixture: Waveform, M: int, seed: int,
                         chunks: ChunkEmbeddings | None = None, n_init: int = N_INIT) -> SpeakerInventory:
    """Cluster the mixture's 1.2 s chunk embeddings into ``M`` profiles.

    Centroids are rescaled to unit length so that dot-product selection
    behaves like cosine similarity.
    """
    if M < 2:
        raise ValueError("M must be >= 2")
    chunks = chunks if chunks is not None else chunk_embeddings(mixture)
    if len(chunks) < M:
        raise ValueError(
            f"need at least {M} non-silent chunks to form {M} clusters, found {len(chunks)} "
            f"({len(chunks.silent_indices)} silent)"
        )
    X = chunks.matrix()
    res = None
    for k in range(n_init):
        run = kmeans(X, M, seed=seeding.sub_seed(seed, "kmeans", k))
        if res is None or run.inertia < res.inertia:
            res = run
    C = res.centroids
    norms = np.linalg.norm(C, axis=1, keepdims=True)
    C = C / np.maximum(norms, 1e-12)
    prov = {
        "kind": "clustered",
        "cluster_sizes": np.bincount(res.assignments, minlength=M).tolist(),
        "inertia": res.inertia,
        "n_iter": res.n_iter,
        "chunk_seconds": chunks.chunk_seconds,
        "chunk_indices": list(chunks.indices),
        "assignments": res.assignments.tolist(),
    }
    return SpeakerInventory(C, prov)


def single_speaker_chunks(script, n_chunks: int, chunk: float = CHUNK_SECONDS,
                          min_active: float = 0.5) -> dict:
    """Chunk index -> speaker for chunks where exactly one speaker talks.

    A chunk qualifies when only one speaker has any activity inside it and
    that speaker covers at least ``min_active`` of the chunk.
    """
    out = {}
    for b in range(n_chunks):
        a, e = b * chunk, (b + 1) * chunk
        spk = script.active_speakers(a, e)
        if len(spk) != 1:
            continue
        covered = sum(
            max(0.0, min(e, ev.offset) - max(a, ev.onset))
            for ev in script.events
            if ev.speaker_id == spk[0]
        )
        if covered >= min_active * chunk:
            out[b] = spk[0]
    return out


def purity(inventory: SpeakerInventory, recording, chunks: ChunkEmbeddings | None = None) -> dict:
    """Per-cluster purity over single-speaker chunks.

    Chunks are attributed to clusters by the stored k-means assignment
    (clustered inventories) or by nearest profile. Chunks containing more
    than one speaker, or mostly silence, are left out.
    """
    prov = inventory.provenance
    if prov.get("kind") == "clustered" and "assignments" in prov:
        cluster_of = dict(zip(prov["chunk_indices"], prov["assignments"]))
        chunk_s = prov.get("chunk_seconds", CHUNK_SECONDS)
    else:
        chunks = chunks if chunks is not None else chunk_embeddings(recording.mixture)
        labels = np.argmax(chunks.matrix() @ inventory.profiles.T, axis=1)
        cluster_of = dict(zip(chunks.indices, labels.tolist()))
        chunk_s = chunks.chunk_seconds
    n_chunks = int(recording.script.duration // chunk_s)
    truth = single_speaker_chunks(recording.script, n_chunks, chunk_s)
    members = {j: [] for j in range(inventory.M)}
    for b, spk in truth.items():
        if b in cluster_of:
            members[cluster_of[b]].append(spk)
    clusters, hits, total = [], 0, 0
    for j in range(inventory.M):
        spks = members[j]
        if not spks:
            clusters.append({"cluster": j, "chunks": 0, "majority_speaker": None, "purity": None})
            continue
        ids, counts = np.unique(spks, return_counts=True)
        top = int(np.argmax(counts))
        clusters.append({
            "cluster": j,
            "chunks": len(spks),
            "majority_speaker": int(ids[top]),
            "purity": float(counts[top] / len(spks)),
        })
        hits += int(counts[top])
        total += len(spks)
    scored = [c["purity"] for c in clusters if c["purity"] is not None]
    return {
        "clusters": clusters,
        "overall": hits / total if total else None,
        "mean_cluster": float(np.mean(scored)) if scored else None,
        "single_speaker_chunks": total,
    }
