"""Parameter-less mutual nearest-neighbor matching between keypoint sets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass
class MatchSet:
    """One-to-one matches (index_a, index_b, similarity), sorted by similarity."""

    pairs: list[tuple[int, int, float]]

    def __len__(self):
        return len(self.pairs)

    def indices(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.pairs:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        arr = np.asarray([(i, j) for i, j, _ in self.pairs], dtype=np.int64)
        return arr[:, 0], arr[:, 1]


def _sorted_pairs(pairs: list[tuple[int, int, float]]) -> list[tuple[int, int, float]]:
    return sorted(pairs, key=lambda p: (-p[2], p[0], p[1]))


def mutual_nearest_neighbors(desc_a: np.ndarray, desc_b: np.ndarray,
                             min_similarity: float = 0.0) -> MatchSet:
    """Pairs (i, j) where each descriptor is the other's best dot-product match.

    Argmax ties break toward the lowest index.  Pairs below ``min_similarity``
    are dropped; the default 0 only rejects anti-correlated matches.
    """
    desc_a = np.asarray(desc_a)
    desc_b = np.asarray(desc_b)
    if desc_a.size == 0 or desc_b.size == 0:
        return MatchSet([])
    if desc_a.shape[1] != desc_b.shape[1]:
        raise ShapeError(f"descriptor dims differ: {desc_a.shape} vs {desc_b.shape}")
    sim = desc_a @ desc_b.T
    best_b = sim.argmax(axis=1)  # first max wins ties
    best_a = sim.argmax(axis=0)
    pairs = []
    for i, j in enumerate(best_b):
        s = float(sim[i, j])
        if best_a[j] == i and s >= min_similarity:
            pairs.append((int(i), int(j), s))
    return MatchSet(_sorted_pairs(pairs))


def mnn_oracle(desc_a: np.ndarray, desc_b: np.ndarray,
               min_similarity: float = 0.0) -> MatchSet:
    """Brute-force double-loop reference matcher; shares no code with the
    production path beyond the dataclass.  Intended for small N only."""
    desc_a = np.asarray(desc_a)
    desc_b = np.asarray(desc_b)
    na, nb = desc_a.shape[0], desc_b.shape[0]
    if na == 0 or nb == 0:
        return MatchSet([])
    pairs = []
    for i in range(na):
        best_j, best_s = -1, -np.inf
        for j in range(nb):
            s = float(np.dot(desc_a[i], desc_b[j]))
            if s > best_s:
                best_j, best_s = j, s
        # reverse check
        rev_i, rev_s = -1, -np.inf
        for ii in range(na):
            s = float(np.dot(desc_a[ii], desc_b[best_j]))
            if s > rev_s:
                rev_i, rev_s = ii, s
        if rev_i == i and best_s >= min_similarity:
            pairs.append((i, best_j, best_s))
    return MatchSet(_sorted_pairs(pairs))


def match_keypoint_sets(kps_a, kps_b, min_similarity: float = 0.0) -> MatchSet:
    """Convenience wrapper over :func:`mutual_nearest_neighbors` for KeypointSets."""
    return mutual_nearest_neighbors(kps_a.desc, kps_b.desc, min_similarity)
