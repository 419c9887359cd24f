"""Mutual nearest-neighbor matcher vs the brute-force oracle."""

import numpy as np
import pytest

from asymloc.errors import ShapeError
from asymloc.matching import MatchSet, mnn_oracle, mutual_nearest_neighbors


def unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def test_oracle_agreement_200_instances():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n_a = int(rng.integers(1, 65))
        n_b = int(rng.integers(1, 65))
        d = int(rng.integers(2, 17))
        a = unit_rows(rng, n_a, d)
        b = unit_rows(rng, n_b, d)
        fast = mutual_nearest_neighbors(a, b)
        slow = mnn_oracle(a, b)
        assert {(i, j) for i, j, _ in fast.pairs} == {(i, j) for i, j, _ in slow.pairs}


def test_matches_are_one_to_one():
    rng = np.random.default_rng(1)
    a = unit_rows(rng, 40, 8)
    b = unit_rows(rng, 30, 8)
    ms = mutual_nearest_neighbors(a, b)
    ia, ib = ms.indices()
    assert len(set(ia.tolist())) == len(ia)
    assert len(set(ib.tolist())) == len(ib)


def test_identical_sets_match_diagonally():
    rng = np.random.default_rng(2)
    a = unit_rows(rng, 10, 6)
    ms = mutual_nearest_neighbors(a, a)
    assert {(i, j) for i, j, _ in ms.pairs} == {(i, i) for i in range(10)}


def test_tie_breaks_toward_lowest_index():
    a = np.array([[1.0, 0.0]])
    b = np.array([[1.0, 0.0], [1.0, 0.0]])   # duplicate best candidates
    ms = mutual_nearest_neighbors(a, b)
    assert ms.pairs == [(0, 0, 1.0)]


def test_min_similarity_filters():
    a = np.array([[1.0, 0.0], [0.0, 1.0]])
    b = np.array([[1.0, 0.0], [0.0, -1.0]])
    ms = mutual_nearest_neighbors(a, b, min_similarity=0.5)
    assert ms.pairs == [(0, 0, 1.0)]


def test_empty_inputs():
    assert mutual_nearest_neighbors(np.zeros((0, 4)), np.zeros((3, 4))).pairs == []
    assert mutual_nearest_neighbors(np.zeros((3, 4)), np.zeros((0, 4))).pairs == []


def test_dim_mismatch_rejected():
    with pytest.raises(ShapeError):
        mutual_nearest_neighbors(np.zeros((2, 4)), np.zeros((2, 5)))


def test_pairs_sorted_by_similarity():
    rng = np.random.default_rng(3)
    a = unit_rows(rng, 20, 8)
    ms = mutual_nearest_neighbors(a, a)
    sims = [s for _, _, s in ms.pairs]
    assert sims == sorted(sims, reverse=True)


def test_matchset_indices_empty():
    ia, ib = MatchSet([]).indices()
    assert ia.size == 0 and ib.size == 0
